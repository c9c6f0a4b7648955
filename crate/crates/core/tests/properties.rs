mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use meshloop::apps::{gen_mesh, shuffle_mesh, CellArea};
use meshloop::exec::{run_ranks, run_serial, run_threads, BackendConfig};
use meshloop::mesh::io::{parse_mesh, write_mesh};
use meshloop::partition::{build_halos, partition_rcb, partition_weighted, Partitioner};
use meshloop::plan::{build_plan, PlanConfig};
use meshloop::renumber::renumber_mesh;
use meshloop::{ElemKind, Layout, Mesh, Payload};

use common::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn layout_round_trip(dim in 1usize..7, size in 0usize..40, seed in any::<u64>()) {
        let mut r = rng(seed);
        let vals: Vec<f64> = (0..dim * size).map(|_| rand::Rng::gen::<f64>(&mut r)).collect();
        let mut m = Mesh::new();
        m.set_soa_threshold(None);
        let s = m.decl_set("s", size).unwrap();
        let d = m.decl_dat("d", s, dim, vals.clone()).unwrap();
        m.transform_layout(d, Layout::Soa);
        let raw = m.dat(d).raw().as_f64().unwrap().to_vec();
        for e in 0..size {
            for c in 0..dim {
                prop_assert_eq!(raw[c * size + e], vals[e * dim + c]);
            }
        }
        prop_assert_eq!(m.fetch(d), Payload::F64(vals.clone()));
        m.transform_layout(d, Layout::Aos);
        prop_assert_eq!(m.dat(d).raw(), &Payload::F64(vals));
    }

    #[test]
    fn plans_have_no_same_color_conflicts(seed in any::<u64>(), bs in 1usize..40) {
        let rm = random_mesh(&mut rng(seed), 120);
        for lp in &rm.loops {
            let plan = build_plan(&rm.mesh, lp.signature(), &PlanConfig { block_size: bs });
            let (b, e, dense_ok) = plan_conflicts(&rm.mesh, lp.signature(), &plan);
            prop_assert_eq!((b, e), (0, 0), "loop {}", lp.name());
            prop_assert!(dense_ok);
            prop_assert_eq!(plan.blocks_by_color.iter().map(Vec::len).sum::<usize>(), plan.nblocks);
            // rebuild determinism
            prop_assert_eq!(&plan, &build_plan(&rm.mesh, lp.signature(), &PlanConfig { block_size: bs }));
        }
    }

    #[test]
    fn halos_match_closure_oracle(seed in any::<u64>(), nranks in 1usize..6) {
        let mut r = rng(seed);
        let rm = random_mesh(&mut r, 80);
        let d = random_decomposition(&mut r, &rm.mesh, nranks);
        let sigs: Vec<_> = rm.loops.iter().map(|l| l.signature().clone()).collect();
        let layout = build_halos(&rm.mesh, &d, &sigs).unwrap();
        let mismatches = halo_mismatches(&rm.mesh, &layout, &halo_oracle(&rm.mesh, &d, &sigs));
        prop_assert!(mismatches.is_empty(), "{:?}", mismatches);
    }

    #[test]
    fn rcb_halves_by_sorted_median(pts in prop::collection::vec((0i32..50, 0i32..50), 2..60)) {
        let mut m = Mesh::new();
        let s = m.decl_set("p", pts.len()).unwrap();
        let xy: Vec<f64> = pts.iter().flat_map(|&(x, y)| [x as f64, y as f64]).collect();
        let c = m.decl_dat("xy", s, 2, xy).unwrap();
        let a = partition_rcb(&m, c, 2).unwrap();
        let sizes = a.part_sizes();
        prop_assert!(sizes[0].abs_diff(sizes[1]) <= 1);
        // sort oracle on the first axis: everything in part 0 sorts no later than part 1
        let max0 = (0..pts.len()).filter(|&i| a.rank_of[i] == 0).map(|i| pts[i].0).max();
        let min1 = (0..pts.len()).filter(|&i| a.rank_of[i] == 1).map(|i| pts[i].0).min();
        if let (Some(hi), Some(lo)) = (max0, min1) {
            prop_assert!(hi <= lo);
        }
    }

    #[test]
    fn weighted_partition_sizes(n in 1usize..400, w in prop::collection::vec(0.1f64..5.0, 1..6)) {
        let mut m = Mesh::new();
        let s = m.decl_set("s", n).unwrap();
        let a = partition_weighted(&m, s, &w).unwrap();
        let total: f64 = w.iter().sum();
        let sizes = a.part_sizes();
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        for (size, wi) in sizes.iter().zip(&w) {
            prop_assert!((*size as f64 - n as f64 * wi / total).abs() <= 1.0 + 1e-9);
        }
        prop_assert!(a.rank_of.windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn renumbering_keeps_results(n in 1usize..7, seed in any::<u64>()) {
        let mut m = gen_mesh(n).mesh;
        shuffle_mesh(&mut m, seed).unwrap();
        let app = CellArea::setup(&mut m, ElemKind::I64).unwrap();
        let mut plain = m.clone();
        run_serial(&mut plain, &app.loops()).unwrap();
        let ren = renumber_mesh(&mut m).unwrap();
        run_threads(&mut m, &app.loops(), &BackendConfig::threads(3, 5)).unwrap();
        let got = ren.restore(app.nodes, m.fetch_i64(app.arean).as_deref().unwrap(), 1);
        prop_assert_eq!(got, plain.fetch_i64(app.arean).unwrap());
    }

    #[test]
    fn random_programs_agree_across_backends(seed in any::<u64>(), nranks in 1usize..5) {
        let rm = random_mesh(&mut rng(seed), 60);
        let mut serial = rm.mesh.clone();
        run_serial(&mut serial, &rm.loops).unwrap();
        let mut threads = rm.mesh.clone();
        run_threads(&mut threads, &rm.loops, &BackendConfig::threads(2, 7)).unwrap();
        let mut ranks = rm.mesh.clone();
        run_ranks(&mut ranks, &rm.loops, &BackendConfig::ranks(nranks, Partitioner::Trivial)).unwrap();
        for name in ["acc", "tag", "cval", "ninc"] {
            let d = serial.dat_by_name(name).unwrap();
            prop_assert_eq!(payload_diff(&serial.fetch(d), &threads.fetch(d), 1e-12), None, "threads {}", name);
            prop_assert_eq!(payload_diff(&serial.fetch(d), &ranks.fetch(d), 1e-12), None, "ranks {}", name);
        }
    }

    #[test]
    fn text_format_round_trips(seed in any::<u64>()) {
        let rm = random_mesh(&mut rng(seed), 30);
        let text = write_mesh(&rm.mesh);
        let back = parse_mesh(&text).unwrap();
        prop_assert_eq!(write_mesh(&back), text);
        for (id, d) in rm.mesh.dats() {
            prop_assert_eq!(back.fetch(back.dat_by_name(&d.name).unwrap()), rm.mesh.fetch(id));
        }
    }
}
