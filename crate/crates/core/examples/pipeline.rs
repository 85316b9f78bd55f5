//! Runs every pipeline stage at toy scale in a scratch directory: data
//! generation, teacher training, distillation, two students, translation,
//! evaluation and the three reports.

use narmt::config::RunConfig;
use narmt::pipeline::{self, AnalysisKind, Layout, TranslateArgs};

fn main() -> narmt::Result<()> {
    let dir = std::env::temp_dir().join("narmt-pipeline-example");
    let _ = std::fs::remove_dir_all(&dir);
    let overrides: Vec<String> = [
        format!("output_dir={:?}", dir.display().to_string()),
        "data.train=300".into(),
        "data.valid=30".into(),
        "data.test=60".into(),
        "data.mono=300".into(),
        "teacher.model_dim=16".into(),
        "teacher.hidden_dim=32".into(),
        "student.model_dim=16".into(),
        "student.hidden_dim=32".into(),
        "teacher_train.max_epochs=3".into(),
        "student_train.max_epochs=3".into(),
        "mono.fractions=[0.0, 1.0]".into(),
        "eval.half_widths=[0, 2]".into(),
    ]
    .into();
    let cfg = RunConfig::from_overrides(&overrides)?;
    let layout = Layout::of(&cfg);

    println!("{:?}", pipeline::cmd_gen_data(&cfg)?);
    let teacher = pipeline::cmd_train_teacher(&cfg, &mut |_| {})?;
    println!("teacher test loss {:.3}", teacher.test_loss);
    let prov = pipeline::cmd_distill(&cfg, None)?;
    println!("distilled with teacher {}", &prov.teacher_sha256[..12]);
    let tckpt = layout.teacher_checkpoint();
    for fraction in [0.0, 1.0] {
        let s = pipeline::cmd_train_student(&cfg, Some(&tckpt), Some(fraction), &mut |_| {})?;
        println!("student mono {fraction}: train {:.3} test {:.3}", s.train_loss, s.test_loss);
    }
    let (test_src, test_tgt) = layout.split("test");
    let output = dir.join("test.hyp");
    pipeline::cmd_translate(
        &cfg,
        &TranslateArgs {
            input: test_src,
            output: output.clone(),
            ..TranslateArgs::default()
        },
    )?;
    let bleu = pipeline::cmd_evaluate(&cfg, &output, &test_tgt, None)?;
    println!("test BLEU {:.2}", bleu.bleu);
    for kind in [AnalysisKind::LossGap, AnalysisKind::BSweep, AnalysisKind::Buckets] {
        println!("wrote {}", pipeline::cmd_analyze(&cfg, kind, None)?.display());
    }
    Ok(())
}
