use clap::Parser;

fn main() {
    let cli = mentalese::cli::Cli::parse();
    let code = mentalese::cli::run(cli, &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
