use clap::Parser;

fn main() {
    let cli = seqcast::cli::Cli::parse();
    match seqcast::cli::run(cli) {
        Ok(output) => {
            print!("{output}");
        }
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(err.exit_code());
        }
    }
}
