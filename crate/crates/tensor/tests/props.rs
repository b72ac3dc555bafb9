use crossview_tensor::io::Container;
use crossview_tensor::{ops, Tensor};
use proptest::prelude::*;

proptest! {
    #[test]
    fn softmax_rows_are_distributions(
        rows in 1usize..4,
        cols in 1usize..6,
        vals in proptest::collection::vec(-30.0f64..30.0, 1..24),
    ) {
        let n = rows * cols;
        let data: Vec<f64> = (0..n).map(|i| vals[i % vals.len()]).collect();
        let x = Tensor::<f64>::from_vec(&[rows, cols], data).unwrap();
        let y = ops::softmax(&x, 1).unwrap();
        let v = y.to_vec();
        for r in 0..rows {
            let s: f64 = v[r * cols..(r + 1) * cols].iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
            prop_assert!(v[r * cols..(r + 1) * cols].iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn broadcast_add_matches_scalar_loop(
        b in 1usize..3,
        c in 1usize..4,
        n in 1usize..5,
        seed in 0u64..1000,
    ) {
        let mut r = crossview_tensor::rng::stream(seed, "prop-add");
        let xa = crossview_tensor::rng::normal_vec(&mut r, b * c * n);
        let xb = crossview_tensor::rng::normal_vec(&mut r, c);
        let a = Tensor::<f64>::from_vec(&[b, c, n], xa.clone()).unwrap();
        let bt = Tensor::<f64>::from_vec(&[c, 1], xb.clone()).unwrap();
        let y = ops::add(&a, &bt).unwrap().to_vec();
        for bi in 0..b {
            for ci in 0..c {
                for ni in 0..n {
                    let idx = (bi * c + ci) * n + ni;
                    prop_assert_eq!(y[idx], xa[idx] + xb[ci]);
                }
            }
        }
    }

    #[test]
    fn container_roundtrips_any_payload(
        dims in proptest::collection::vec(1usize..5, 0..4),
        seed in 0u64..1000,
        as_bytes in any::<bool>(),
    ) {
        let n: usize = dims.iter().product();
        let mut c = Container::new();
        if as_bytes {
            let data: Vec<u8> = (0..n).map(|i| ((i as u64 ^ seed) % 251) as u8).collect();
            c.insert_u8("t", &dims, data).unwrap();
        } else {
            let mut r = crossview_tensor::rng::stream(seed, "prop-io");
            let data: Vec<f32> = crossview_tensor::rng::normal_vec(&mut r, n)
                .into_iter()
                .map(|v| v as f32)
                .collect();
            c.insert_f32("t", &dims, data).unwrap();
        }
        let mut buf = Vec::new();
        c.to_writer(&mut buf).unwrap();
        let back = Container::from_reader(buf.as_slice()).unwrap();
        prop_assert_eq!(back.get("t"), c.get("t"));
    }
}
