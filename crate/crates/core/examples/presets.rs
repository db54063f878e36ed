//! Lists the shipped presets with their main hyperparameters.

use ufnet::experiment::presets;

fn main() {
    let p = presets();
    println!("task presets");
    for (name, t) in &p.task {
        let c = &t.config;
        println!(
            "  {name:<14} {:<8} hidden {} dropout {:.3} rounds {:>5} epochs {:>3} lr {:.4}",
            t.task.to_string(),
            c.hidden_layers,
            c.dropout,
            c.mc_rounds,
            c.train.epochs,
            c.train.optimizer.lr
        );
    }
    println!("fusion presets");
    for (name, c) in &p.fusion {
        let tasks: Vec<String> = c.tasks.iter().map(|t| t.to_string()).collect();
        println!(
            "  {name:<22} {:<22} proj {:>3} qkv {:>3} eta {:>7.3} head width {}",
            tasks.join(","),
            c.projection_dim,
            c.qkv_dim,
            c.eta,
            c.head_input_width()
        );
    }
    println!("baseline presets");
    for (name, c) in &p.baseline {
        println!("  {name:<14} hidden {} epochs {}", c.hidden_layers, c.train.epochs);
    }
}
