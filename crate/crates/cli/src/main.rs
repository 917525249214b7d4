use clap::Parser;

fn main() {
    let cli = cylwell_cli::config::Cli::parse();
    std::process::exit(cylwell_cli::execute(&cli));
}
