//! Drive the command-line interface in-process: generate a world, evaluate
//! on it and dump the augmented support set of one task.

fn run(args: &[&str]) -> i32 {
    let code = gdc::cli::run(std::iter::once("gdc").chain(args.iter().copied()));
    println!("gdc {} -> exit {code}", args[0]);
    code
}

fn main() {
    let dir = std::env::temp_dir().join("gdc-cli-walkthrough");
    let d = dir.to_str().expect("utf-8 temp dir");
    let features = format!("{d}/features.gdcf");
    let manifest = format!("{d}/manifest.json");
    let result = format!("{d}/result.json");
    let dump = format!("{d}/samples.gdcf");
    let config = ["--beta", "1", "--m", "2", "--k", "2", "--alpha1", "1", "--alpha2", "0", "--n", "200"];

    assert_eq!(run(&["gen-synth", "--out-dir", d, "--seed", "1"]), 0);
    let mut eval =
        vec!["evaluate", "--features", &features, "--manifest", &manifest, "--tasks", "50", "--out", &result];
    eval.extend(config);
    assert_eq!(run(&eval), 0);
    let mut dump_args = vec!["dump-samples", "--features", &features, "--manifest", &manifest, "--out", &dump];
    dump_args.extend(config);
    assert_eq!(run(&dump_args), 0);
    // a missing manifest is an input error
    assert_eq!(run(&["evaluate", "--features", &features, "--manifest", "/nonexistent.json", "--out", &result]), 1);
}
