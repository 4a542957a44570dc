use clap::Parser;

fn main() {
    let cli = robocal::cli::Cli::parse();
    let code = robocal::cli::run(cli, &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
