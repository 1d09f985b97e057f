use tempalign::aligner::{train, AlignmentHead, TrainConfig, TrainSource};
use tempalign::evalkit::{embedding_shift_histograms, DEFAULT_BINS};
use tempalign::fixture::{RotationConfig, RotationFixture};
use tempalign::pairgen::{build_pairs, PairParams};
use tempalign::retriever::{RetrievalStrategy, Retriever, RichPool, SelectOptions};

fn top1_accuracy(f: &RotationFixture, head: &AlignmentHead) -> f64 {
    let pool = RichPool { records: &f.rich, store: &f.rich_store };
    let opts = SelectOptions { head: Some(head), ..Default::default() };
    let r = Retriever::new(RetrievalStrategy::Aligned, &f.low_store, pool, opts).unwrap();
    let held = f.heldout_low();
    let ids: Vec<&str> = held.records.iter().map(|r| r.id.as_str()).collect();
    let hits = r
        .select_many(&ids, 1)
        .unwrap()
        .iter()
        .filter(|c| Some(c.exemplars[0].id.clone()) == RotationFixture::true_match(&c.query_id))
        .count();
    hits as f64 / ids.len() as f64
}

#[test]
fn trained_head_recovers_rotation() {
    let f = RotationFixture::generate(RotationConfig::default()).unwrap();
    let set = build_pairs(&f.train_low(), &f.low_store, &f.translated_store, &f.id_map, PairParams::default()).unwrap();
    assert_eq!(set.pairs.len(), 300 * 40);
    let config = TrainConfig { learning_rate: 1e-2, epochs: 20, batch_size: 64, scale: 5.0, seed: 1, ..Default::default() };
    let source = TrainSource::new(&set.pairs, &f.low_store, &f.rich_store);
    let start = AlignmentHead::perturbed_identity(64, 1e-3, 1);
    let (head, report) = train(&start, &[source], &[], &config).unwrap();
    let identity = top1_accuracy(&f, &AlignmentHead::identity(64));
    let trained = top1_accuracy(&f, &head);
    eprintln!("identity {identity} trained {trained} in {:.1}s; loss {:?}", report.wall_time_secs, report.train_loss);
    assert!(identity <= 0.5);
    assert!(trained >= 0.9);

    let pairs = f.translation_pairs(&f.low);
    let shift =
        embedding_shift_histograms(&f.low_store, &f.rich_store, &pairs, &AlignmentHead::identity(64), &head, 3, DEFAULT_BINS)
            .unwrap();
    eprintln!(
        "positive {} -> {}, antagonist {} -> {}",
        shift.positive.mean_before, shift.positive.mean_after, shift.antagonist.mean_before, shift.antagonist.mean_after
    );
    assert!(shift.positive.mean_after > shift.positive.mean_before);
    assert!(shift.antagonist.mean_after - shift.antagonist.mean_before <= 0.05);
}
