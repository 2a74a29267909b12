use clap::Parser;

fn main() {
    let cli = tidet::cli::Cli::parse();
    if let Err(e) = tidet::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
