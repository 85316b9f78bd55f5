//! Generates both synthetic translation tasks and prints a few pairs.

use narmt::synth::{generate_corpus, generate_monolingual, task_oracle, SplitSizes, TaskKind, TaskSpec};

fn main() -> narmt::Result<()> {
    for kind in [TaskKind::MappedReversal, TaskKind::EvenDuplication] {
        let spec = TaskSpec::desk(kind);
        let sizes = SplitSizes {
            train: 200,
            valid: 20,
            test: 20,
        };
        let corpus = generate_corpus(&spec, sizes, 1)?;
        println!("{kind:?}: vocabulary of {} ids", spec.total_vocab());
        for pair in corpus.train.iter().take(3) {
            assert_eq!(task_oracle(&spec, &pair.src), pair.tgt);
            println!("  {:?} -> {:?}", pair.src, pair.tgt);
        }
        let mono = generate_monolingual(&spec, 50, 2, corpus.sources())?;
        println!("  {} monolingual sources, none seen in the parallel splits", mono.len());
    }
    Ok(())
}
