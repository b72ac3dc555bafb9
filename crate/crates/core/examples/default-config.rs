// Print the default run configuration as a starting point for --config files.
fn main() {
    let cfg = crossview::config::RunConfig::default();
    println!("{}", serde_json::to_string_pretty(&cfg).unwrap());
}
