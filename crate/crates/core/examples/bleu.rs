//! Corpus BLEU on whitespace-tokenized text and on token ids.

use narmt::eval::{corpus_bleu, corpus_bleu_text, BleuOptions, Smoothing};

fn main() -> narmt::Result<()> {
    let hyps = ["the cat sat on the mat", "a quick brown fox"];
    let refs = ["the cat sat on the red mat", "the quick brown fox"];
    let plain = corpus_bleu_text(&hyps, &refs, BleuOptions::default())?;
    println!("text BLEU {:.2}  precisions {:?}  BP {:.3}", plain.bleu, plain.precisions, plain.brevity_penalty);
    let smoothed = corpus_bleu_text(
        &hyps,
        &refs,
        BleuOptions {
            smoothing: Smoothing::AddOne,
            ..BleuOptions::default()
        },
    )?;
    println!("add-one smoothed BLEU {:.2}", smoothed.bleu);

    let ids = corpus_bleu(&[vec![4, 5, 6, 7, 8]], &[vec![4, 5, 6, 7, 9]], Smoothing::None)?;
    println!("token-id BLEU {:.2}", ids.bleu);
    Ok(())
}
