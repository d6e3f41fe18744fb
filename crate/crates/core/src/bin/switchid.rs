fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SWITCHID_LOG", "warn")).init();
    std::process::exit(switchid::cli::run(std::env::args_os()));
}
