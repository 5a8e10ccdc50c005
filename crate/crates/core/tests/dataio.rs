use std::path::Path;

use proptest::prelude::{prop_assert_eq, proptest, ProptestConfig};
use sqseg::arch::{build_squeeze_segnet, ParamStore};
use sqseg::dataio::{
    checkpoint_layout, colorize, decode_checkpoint, decolorize, encode_checkpoint, load_checkpoint,
    load_dataset, load_image, load_labels, save_checkpoint, synth_dataset, write_dataset, LabelMap,
    Palette, SynthConfig,
};
use sqseg::Rng;

#[test]
fn full_model_checkpoint_payload() {
    let plan = build_squeeze_segnet(11).unwrap();
    let params = ParamStore::init(&plan, &mut Rng::new(1)).unwrap();
    let layout = checkpoint_layout(&params);
    assert_eq!(layout.payload_bytes, 4 * 2_611_939);
    assert_eq!(layout.payload_bytes, 10_447_756);
    let bytes = encode_checkpoint(&params).unwrap();
    assert_eq!(bytes.len(), layout.total_bytes());
    assert_eq!(&bytes[..4], b"SQSG");
}

#[test]
fn checkpoint_file_round_trip_is_bit_exact() {
    let plan = build_squeeze_segnet(11).unwrap();
    let params = ParamStore::init(&plan, &mut Rng::new(3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.sqsg");
    save_checkpoint(&params, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(
        back.names().collect::<Vec<_>>(),
        params.names().collect::<Vec<_>>()
    );
    for ((_, a), (_, b)) in params.iter().zip(back.iter()) {
        assert_eq!(a.dims(), b.dims());
        assert!(a
            .data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(
        std::fs::read(&path).unwrap(),
        encode_checkpoint(&back).unwrap()
    );
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let plan = build_squeeze_segnet(2).unwrap();
    let params = ParamStore::init(&plan, &mut Rng::new(0)).unwrap();
    let bytes = encode_checkpoint(&params).unwrap();
    assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(decode_checkpoint(&extra).is_err());
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(decode_checkpoint(&magic).is_err());
    let mut version = bytes;
    version[4] = 9;
    assert!(decode_checkpoint(&version).is_err());
}

#[test]
fn two_pixel_ppm() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ppm");
    let mut bytes = b"P6\n2 1\n255\n".to_vec();
    bytes.extend_from_slice(&[255, 0, 0, 0, 0, 255]);
    std::fs::write(&path, bytes).unwrap();
    let t = load_image(&path).unwrap();
    assert_eq!(t.dims().to_array(), [1, 3, 1, 2]);
    assert_eq!(t.plane(0, 0), &[1.0, 0.0]);
    assert_eq!(t.plane(0, 1), &[0.0, 0.0]);
    assert_eq!(t.plane(0, 2), &[0.0, 1.0]);
}

#[test]
fn malformed_images_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [&[u8]; 4] = [
        b"P5\n1 1\n255\n\0",
        b"P6\n2 1\n255\n\0\0\0",
        b"P6\n1 1\n65535\n\0\0\0\0\0\0",
        b"P6\n1\n",
    ];
    for (i, bytes) in cases.iter().enumerate() {
        let path = dir.path().join(format!("{i}.ppm"));
        std::fs::write(&path, bytes).unwrap();
        assert!(load_image(&path).is_err(), "case {i}");
    }
    let path = dir.path().join("l.pgm");
    std::fs::write(&path, b"P5\n2 1\n255\n\x01").unwrap();
    assert!(load_labels(&path).is_err());
}

#[test]
fn synthetic_dataset_survives_directory_round_trip() {
    let cfg = SynthConfig {
        count: 3,
        height: 12,
        width: 16,
        ..SynthConfig::default()
    };
    let samples = synth_dataset(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &samples).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.len(), 3);
    for (a, b) in samples.iter().zip(&back) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.image_rgb(), b.image_rgb());
    }
    assert_eq!(synth_dataset(&cfg).unwrap()[2].labels, samples[2].labels);
}

#[test]
fn camvid_palette_order() {
    let p = Palette::camvid11();
    let names: Vec<&str> = p.classes().map(|e| e.name.as_str()).collect();
    assert_eq!(
        names,
        [
            "Sky",
            "Building",
            "Pole",
            "Road",
            "Sidewalk",
            "Tree",
            "Sign",
            "Car",
            "Fence",
            "Pedestrian",
            "Bicyclist"
        ]
    );
    assert_eq!(p.color(3), Some([128, 64, 128]));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn colorize_is_invertible(h in 1usize..8, w in 1usize..8, seed in 0u64..u64::MAX, k in 2usize..40) {
        let palette = if k == 11 { Palette::camvid11() } else { Palette::generated(k).unwrap() };
        let mut rng = Rng::new(seed);
        let ids: Vec<u8> = (0..h * w).map(|_| rng.below(k as u64) as u8).collect();
        let labels = LabelMap::new(h, w, ids).unwrap();
        let ppm = colorize(&labels, &palette).unwrap();
        prop_assert_eq!(decolorize(&ppm, &palette).unwrap(), labels);
    }

    #[test]
    fn small_store_round_trip(seed in 0u64..u64::MAX) {
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        for i in 0..rng.range_inclusive(1, 4) {
            let d = (rng.range_inclusive(1, 3), rng.range_inclusive(1, 3), 1, rng.range_inclusive(1, 3));
            let len = d.0 * d.1 * d.2 * d.3;
            let vals = (0..len).map(|_| f32::from_bits(rng.next_u64() as u32 & 0x7f7f_ffff)).collect();
            store.insert(format!("p{i}.w"), sqseg::Tensor::from_vec(d, vals).unwrap()).unwrap();
        }
        let bytes = encode_checkpoint(&store).unwrap();
        prop_assert_eq!(encode_checkpoint(&decode_checkpoint(&bytes).unwrap()).unwrap(), bytes);
    }
}

#[test]
fn shipped_palette_file_matches_builtin() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../palettes/camvid11.txt");
    let p = Palette::load(&path).unwrap();
    let builtin = Palette::camvid11();
    assert_eq!(
        p.classes().cloned().collect::<Vec<_>>(),
        builtin.classes().cloned().collect::<Vec<_>>()
    );
    assert_eq!(p.num_classes(), 11);
    assert_eq!(p.color(255), Some([0, 0, 0]));
}
