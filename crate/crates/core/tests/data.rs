use fcnr_core::data::{generate_corpus, CorpusConfig, Manifest, RenderMode, Split, SplitFilter};

fn small(mode: RenderMode) -> CorpusConfig {
    CorpusConfig {
        subdivision: 1,
        timesteps: 3,
        height: 32,
        width: 48,
        mode,
        ..CorpusConfig::default()
    }
}

#[test]
fn corpus_generation_is_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = small(RenderMode::Dvr);
    let ma = generate_corpus(&cfg, a.path()).unwrap();
    generate_corpus(&cfg, b.path()).unwrap();
    for r in &ma.records {
        let x = std::fs::read(a.path().join(&r.path)).unwrap();
        let y = std::fs::read(b.path().join(&r.path)).unwrap();
        assert_eq!(x, y, "{}", r.path);
    }
    assert_eq!(
        std::fs::read(a.path().join("manifest.csv")).unwrap(),
        std::fs::read(b.path().join("manifest.csv")).unwrap()
    );
}

#[test]
fn generated_manifest_loads_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(RenderMode::Ir);
    generate_corpus(&cfg, dir.path()).unwrap();
    let m = Manifest::read_csv(&dir.path().join("manifest.csv")).unwrap();
    assert_eq!(m.records.len(), 42 * 3);
    let train = m.pairs_in(SplitFilter::Train).unwrap();
    let heldout = m.pairs_in(SplitFilter::Heldout).unwrap();
    // 11 of 21 pairs at timestep 0 only.
    assert_eq!(train.len(), 11);
    assert_eq!(heldout.len(), 63 - 11);
    assert!(train.iter().all(|p| p.split() == Split::Train && p.left.t == 0));
    let pair = m.load_pair(&train[3]).unwrap();
    assert_eq!((pair.left.height, pair.left.width), (32, 48));
    assert_eq!(pair.vis[0].t, pair.vis[1].t);
    let cfg_back = CorpusConfig::load(&dir.path().join("corpus.toml")).unwrap();
    assert_eq!(cfg_back, cfg);
}
