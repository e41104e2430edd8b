fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LAYERSPLICE_LOG", "warn")).init();
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    let code = layersplice_cli::run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock());
    std::process::exit(code);
}
