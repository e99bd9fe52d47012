fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    std::process::exit(lowrank_sgd::cli::main_with(std::env::args_os()));
}
