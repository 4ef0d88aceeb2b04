use clap::Parser;

fn main() {
    let cli = gaze_cli::Cli::parse();
    std::process::exit(gaze_cli::run(&cli));
}
