//! Ranks criteria passages from the bundled corpus for a free-text query.
//!
//! cargo run --example retrieve_criteria -- "cup to disc ratio glaucoma"

use diagflow::knowledge::{bundled_corpus, KnowledgeIndex};

fn main() -> anyhow::Result<()> {
    let query = std::env::args().nth(1).unwrap_or_else(|| "optic disc cupping glaucoma".into());
    let index = KnowledgeIndex::from_documents(bundled_corpus())?;
    println!("{} documents, {} passages, checksum {}", index.document_count(), index.passage_count(), index.checksum());
    for (rank, hit) in index.retrieve(&query, 5).iter().enumerate() {
        println!("{:>2}. {:.3} [{} {}..{}] {}", rank + 1, hit.score, hit.doc_id, hit.span.0, hit.span.1, hit.passage);
    }
    Ok(())
}
