use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut stdout = std::io::stdout().lock();
    match textcnn_cli::run(std::env::args_os(), &mut stdout) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            if let Some(clap_err) = e.downcast_ref::<clap::Error>() {
                // help and version requests land here too
                let _ = clap_err.print();
                return ExitCode::from(if clap_err.use_stderr() { 2 } else { 0 });
            }
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
