use clap::Parser;
use contdec::cli::{init, run, Cli};

fn main() {
    let cli = Cli::parse();
    init(cli.command.common());
    std::process::exit(run(&cli));
}
