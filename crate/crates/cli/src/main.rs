mod args;
mod commands;
mod run;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use run::Failure;

fn dispatch(cli: Cli) -> run::Outcome {
    match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Eval(a) => commands::eval_cmd(a),
        Command::Infer(a) => commands::infer_cmd(a),
        Command::Ablate(a) => commands::ablate_cmd(a),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            let ok = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            std::process::exit(if ok { 0 } else { 1 });
        }
    };
    if let Err(f) = dispatch(cli) {
        eprintln!("error: {f}");
        std::process::exit(Failure::code(&f));
    }
}
