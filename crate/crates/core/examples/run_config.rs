//! Loads a partial run configuration, applies overrides and prints the
//! fully resolved result.

use narmt::config::RunConfig;

fn main() -> narmt::Result<()> {
    let text = r#"
name = "dup-small"

[task]
kind = "even_duplication"

[teacher_train]
max_epochs = 10
"#;
    let overrides = ["data.train=2000".to_string(), "length.half_width=3".to_string()];
    let cfg = RunConfig::from_toml_str(text, &overrides)?;
    println!("output directory: {}", cfg.resolved_output_dir().display());
    print!("{}", cfg.to_toml()?);
    Ok(())
}
