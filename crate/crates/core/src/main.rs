use clap::Parser;

fn main() {
    let cli = entyper::cli::Cli::parse();
    if let Err(e) = entyper::cli::run(cli) {
        let msg = format!("{e:#}").replace('\n', " ");
        eprintln!("error: {msg}");
        std::process::exit(1);
    }
}
