use proptest::prelude::*;
use thermosplat::pfm::{read_pfm, write_pfm, FloatImage};
use thermosplat::ply::{read_cloud, write_cloud};
use thermosplat_core::gaussian::{sh_coeff_count, GaussianCloud};

fn any_f64() -> impl Strategy<Value = f64> {
    any::<u64>().prop_map(f64::from_bits)
}

prop_compose! {
    fn arb_cloud()(deg in 0usize..4, embed in 0usize..6, n in 0usize..8)
        (vals in prop::collection::vec(any_f64(), n * (3 + 4 + 3 + 3 + 3 * sh_coeff_count(deg) + embed)), deg in Just(deg), embed in Just(embed), n in Just(n))
        -> GaussianCloud
    {
        let mut c = GaussianCloud::new(deg, embed);
        let mut it = vals.into_iter();
        let mut take = |k: usize| (0..k).map(|_| it.next().unwrap()).collect::<Vec<_>>();
        for _ in 0..n {
            c.positions.extend(take(3));
            c.rotations.extend(take(4));
            c.log_scales.extend(take(3));
            c.opacity_c.extend(take(1));
            c.opacity_t.extend(take(1));
            c.t_base.extend(take(1));
            c.sh.extend(take(3 * sh_coeff_count(deg)));
            c.embeddings.extend(take(embed));
        }
        c
    }
}

fn bits(c: &GaussianCloud) -> Vec<(&'static str, Vec<u64>)> {
    c.families().iter().map(|(n, v)| (*n, v.iter().map(|x| x.to_bits()).collect())).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn ply_round_trip_is_bit_exact(c in arb_cloud()) {
        let back = read_cloud(&write_cloud(&c)).unwrap();
        prop_assert_eq!((back.sh_degree, back.embed_dim, back.len()), (c.sh_degree, c.embed_dim, c.len()));
        prop_assert_eq!(bits(&back), bits(&c));
    }

    #[test]
    fn pfm_round_trip_is_bit_exact(w in 1usize..12, h in 1usize..12, three in any::<bool>(), seed in any::<u64>()) {
        let ch = if three { 3 } else { 1 };
        let mut s = seed;
        let data = (0..w * h * ch).map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            f32::from_bits((s >> 32) as u32)
        }).collect();
        let img = FloatImage { width: w, height: h, channels: ch, data };
        prop_assert!(read_pfm(&write_pfm(&img).unwrap()).unwrap().bit_eq(&img));
    }
}
