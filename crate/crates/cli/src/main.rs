use clap::error::ErrorKind;
use clap::Parser;
use codenames_cli::cli::{run, Cli};

fn fail(kind: &str, message: &str, code: i32) -> ! {
    eprintln!("{}", serde_json::json!({ "error": kind, "message": message }));
    std::process::exit(code);
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            fail("usage", first.trim_start_matches("error: "), 2)
        }
    };
    if let Err(e) = run(cli) {
        fail(e.kind(), &e.to_string(), 1);
    }
}
