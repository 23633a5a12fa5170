//! Renders a small synthetic corpus, pairs poorly scored images with the best
//! image of their class and writes everything to a directory.

use aesthete::pairing::{
    assemble_triplets, form_pairs, generate_corpus, save_corpus, save_pairs, split_pairs, triplets_path, CorpusEntry,
    DEFAULT_HIGH_MIN, DEFAULT_LOW_MAX,
};

fn main() -> anyhow::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "target/example_corpus".into());
    let corpus = generate_corpus(300, 0, 32, 42)?;
    let entries: Vec<CorpusEntry> = corpus.images.iter().map(|c| c.entry).collect();
    let pairs = form_pairs(&entries, DEFAULT_LOW_MAX, DEFAULT_HIGH_MIN)?;
    let (train, test) = split_pairs(&pairs, pairs.len() - 10, 10, 0)?;
    println!("{} images, {} pairs ({} train, {} test)", entries.len(), pairs.len(), train.len(), test.len());

    let triplets = assemble_triplets(&corpus, &pairs[..3])?;
    for t in &triplets {
        println!(
            "{:>4} (MOS {:.2}) -> {:>4} (MOS {:.2})  \"{}\"  [{}]",
            t.input.entry.id,
            t.input.entry.mos,
            t.reference.entry.id,
            t.reference.entry.mos,
            t.caption,
            t.assessment.render()
        );
    }

    let dir = std::path::Path::new(&dir);
    save_corpus(dir, &corpus)?;
    save_pairs(&triplets_path(dir), &pairs)?;
    println!("written to {}", dir.display());
    Ok(())
}
