fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Some(n) = std::env::var("PARAISITE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("PARAISITE_THREADS ignored: {e}");
        }
    }
    std::process::exit(paraisite::cli::main_with_args(std::env::args_os()));
}
