use clap::Parser;

fn main() {
    let cli = stackelberg_cli::Cli::parse();
    let code = stackelberg_cli::run(&cli, &mut std::io::stdout().lock(), &mut std::io::stderr().lock());
    std::process::exit(code);
}
