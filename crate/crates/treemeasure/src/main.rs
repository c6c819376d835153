use std::io::{stderr, stdout};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("TREEMEASURE_LOG"))
        .format_timestamp(None)
        .init();
    let code = treemeasure::cli::run(std::env::args_os(), &mut stdout(), &mut stderr());
    std::process::exit(code);
}
