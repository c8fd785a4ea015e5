//! Runs the pinned cross-resolution experiment and prints the table.
//! Optional args: max_epochs patience.

use resadapt::experiment::{cross_resolution, Recipe};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().collect();
    let mut recipe = Recipe::desk();
    if let Some(e) = args.get(1) {
        recipe.train.max_epochs = e.parse().expect("max_epochs");
    }
    if let Some(p) = args.get(2) {
        recipe.train.patience_epochs = p.parse().expect("patience");
    }
    let r = cross_resolution(&recipe, |m| eprintln!("{m}")).expect("experiment");
    print!("{}", r.report.to_text());
    for s in &r.scores {
        println!("{} {} {} {:.3}", s.model, s.column, s.case, s.dice);
    }
}
