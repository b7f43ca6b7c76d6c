use proptest::prelude::*;
use ticketlab_core::elastic::{squeeze_ticket, stretch_ticket, BlockMap};
use ticketlab_core::pruner::Ticket;
use ticketlab_core::{ArchSpec, Mask, NetworkParams};

/// The duplicated columns of a two-to-four stretch.
const DUPLICATES: [usize; 2] = [3, 4];

fn random_mask(arch: &ArchSpec, bits: &[bool]) -> Mask {
    let shapes = arch.layer_shapes();
    let mut it = bits.iter().copied();
    let layers = shapes
        .iter()
        .map(|&(r, c)| (0..r * c).map(|_| it.next().unwrap()).collect())
        .collect();
    Mask::from_layers(shapes, layers).unwrap()
}

fn source() -> impl Strategy<Value = (ArchSpec, Mask, u64)> {
    (1usize..9, 1usize..9, any::<u64>()).prop_flat_map(|(h1, h2, seed)| {
        let arch = ArchSpec::new(vec![h1, h2], 2).unwrap();
        let n = arch.weight_count();
        prop::collection::vec(any::<bool>(), n).prop_map(move |bits| (arch.clone(), random_mask(&arch, &bits), seed))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn squeeze_undoes_stretch((arch, mask, seed) in source()) {
        let wide = ArchSpec::new(arch.hidden.clone(), 4).unwrap();
        let stretched = BlockMap::stretch(&arch, &wide).unwrap().apply_mask(&mask).unwrap();
        let back = BlockMap::squeeze(&wide, &arch, &DUPLICATES).unwrap().apply_mask(&stretched).unwrap();
        prop_assert_eq!(&back, &mask);

        let ticket = Ticket::new(mask.clone(), NetworkParams::<f64>::init(&arch, seed)).unwrap();
        let t4 = stretch_ticket(&ticket, &wide).unwrap();
        prop_assert_eq!(t4.mask().layer_density(2), mask.layer_density(2));
        prop_assert_eq!(t4.mask().layer(0), mask.layer(0));
        prop_assert_eq!(t4.mask().layer(1), mask.layer(1));
        let t2 = squeeze_ticket(&t4, &arch, &DUPLICATES).unwrap();
        prop_assert_eq!(t2.mask(), &mask);
        let a: Vec<u64> = t2.init().values().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = ticket.init().values().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn stretched_columns_copy_sources((arch, mask, seed) in source()) {
        let wide = ArchSpec::new(arch.hidden.clone(), 4).unwrap();
        let ticket = Ticket::new(mask, NetworkParams::<f64>::init(&arch, seed)).unwrap();
        let t4 = stretch_ticket(&ticket, &wide).unwrap();
        let (src, dst) = (ticket.init().layer_weights(2), t4.init().layer_weights(2));
        let rows = arch.hidden[1];
        for r in 0..rows {
            for j in 0..4 {
                prop_assert_eq!(dst[r * 4 + j].to_bits(), src[r * 2 + j % 2].to_bits());
                prop_assert_eq!(t4.mask().get(2, r, j), ticket.mask().get(2, r, j % 2));
            }
        }
        prop_assert_eq!(t4.init().layer_biases(2), &[src_bias(&ticket, 0), src_bias(&ticket, 1), src_bias(&ticket, 0), src_bias(&ticket, 1)][..]);
    }
}

fn src_bias(t: &Ticket<f64>, i: usize) -> f64 {
    t.init().layer_biases(2)[i]
}

#[test]
fn mismatched_hidden_widths_are_rejected() {
    let a = ArchSpec::new(vec![3, 3], 2).unwrap();
    let b = ArchSpec::new(vec![3, 4], 4).unwrap();
    assert!(BlockMap::stretch(&a, &b).is_err());
    assert!(BlockMap::squeeze(&b, &a, &[2, 4]).is_err());
}
