use clap::error::ErrorKind;
use clap::Parser;
use dualprune::cli::Cli;

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            std::process::exit(0);
        }
        Err(e) => {
            eprint!("{e}");
            std::process::exit(1);
        }
    };
    if let Err(e) = cli.command.execute() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
