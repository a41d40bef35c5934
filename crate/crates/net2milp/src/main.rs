use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NET2MILP_LOG", "warn")).init();
    let code = net2milp::cli::run_from(std::env::args_os());
    ExitCode::from(u8::try_from(code).unwrap_or(1))
}
