use std::io::Write;
use std::process::ExitCode;

fn main() -> ExitCode {
    let out = bgenet_cli::run_cli(std::env::args_os());
    let written = std::io::stdout()
        .lock()
        .write_all(out.stdout.as_bytes())
        .and_then(|_| std::io::stdout().flush());
    eprint!("{}", out.stderr);
    if written.is_err() {
        return ExitCode::from(2);
    }
    ExitCode::from(out.code)
}
