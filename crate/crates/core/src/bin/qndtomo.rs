use clap::Parser;

fn main() {
    std::process::exit(qndtomo::cli::run(qndtomo::cli::Cli::parse()));
}
