use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = scal::cli::Cli::parse(); // usage errors exit 2 via clap
    if let Err(e) = scal::cli::run(args) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
