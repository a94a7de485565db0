use clap::Parser;

fn main() {
    let cli = advpinn_cli::Cli::parse();
    std::process::exit(advpinn_cli::run(&cli));
}
