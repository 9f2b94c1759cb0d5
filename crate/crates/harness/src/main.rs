use clap::error::ErrorKind;
use clap::Parser;
use hcmarl_harness::cli::{error_line, run, Cli};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return;
        }
        Err(e) => {
            eprintln!("{}", error_line("usage_error", &e.to_string()));
            std::process::exit(2);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("{}", error_line(e.class(), &e.to_string()));
        std::process::exit(e.exit_code());
    }
}
