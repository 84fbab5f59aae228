use knudsen::cli::{parse_args, run};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let code = match parse_args() {
        Ok(cli) => run(&cli),
        Err(code) => code,
    };
    std::process::exit(code);
}
