fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    if let Err(e) = ufnet::experiment::cli::run(&argv) {
        match &e {
            ufnet::Error::Usage(msg) => eprintln!("{msg}"),
            _ => eprintln!("error: {e}"),
        }
        std::process::exit(e.exit_code());
    }
}
