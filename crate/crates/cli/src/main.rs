use clap::Parser;

fn main() {
    let cli = degensolve_cli::Cli::parse();
    match degensolve_cli::run(&cli) {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            std::process::exit(outcome.exit_code());
        }
        Err(e) => {
            eprintln!("degensolve: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
