use slod_core::data::synth::glyphs::{synth_glyphs, GlyphFamily};
use slod_core::data::synth::{synth_ood, NoiseKind};
use slod_core::metrics::{accuracy, auroc, ece, msp_score};
use slod_core::nn::{eval_logits, ModelSpec, Parameters};
use slod_core::soft_targets::OEConfig;
use slod_core::train::{distill, finetune_oe, train_model, TrainConfig, TrainLoss};
use std::time::Instant;

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

fn main() {
    let n_train = 4096;
    let n_test = 2048;
    let digits_raw = synth_glyphs(GlyphFamily::Digits, n_train, 1).unwrap();
    let norm = digits_raw.statistics();
    let id_train = digits_raw.normalize(norm).unwrap();
    let id_test = synth_glyphs(GlyphFamily::Digits, n_test, 2).unwrap().normalize(norm).unwrap();
    let letters_train = synth_glyphs(GlyphFamily::Letters, n_train, 3).unwrap().normalize(norm).unwrap();
    let letters_test = synth_glyphs(GlyphFamily::Letters, n_test, 4).unwrap().normalize(norm).unwrap();
    let unif = synth_ood(NoiseKind::Uniform, n_test, [1, 28, 28], 5).unwrap().normalize(norm).unwrap();
    let gauss = synth_ood(NoiseKind::Gaussian, n_test, [1, 28, 28], 6).unwrap().normalize(norm).unwrap();
    let spec = ModelSpec::default();
    let seeds = [1u64, 2, 3];

    let eval_all = |params: &Parameters| -> (f64, f64, [f64; 3]) {
        let id_logits = eval_logits(params, &spec, id_test.images(), 256).unwrap();
        let labels = id_test.labels().unwrap();
        let acc = accuracy(&id_logits, labels).unwrap();
        let id_msp = msp_score(&id_logits).unwrap();
        let correct: Vec<bool> = (0..labels.len()).map(|i| {
            let row = &id_logits.data()[i*10..(i+1)*10];
            let am = row.iter().enumerate().max_by(|a,b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
            am == labels[i] as usize
        }).collect();
        let e = ece(&id_msp, &correct, 15).unwrap();
        let mut aurocs = [0.0; 3];
        for (i, ds) in [&letters_test, &unif, &gauss].iter().enumerate() {
            let logits = eval_logits(params, &spec, ds.images(), 256).unwrap();
            aurocs[i] = auroc(&id_msp, &msp_score(&logits).unwrap()).unwrap();
        }
        (acc, e, aurocs)
    };

    let t0 = Instant::now();
    let (mut b_acc, mut b_let, mut b_unif) = (vec![], vec![], vec![]);
    let (mut l1_let, mut l3_let) = (vec![], vec![]);
    let (mut o_acc, mut o_let, mut o_unif) = (vec![], vec![], vec![]);
    let mut s_acc = vec![];
    let (mut g_let, mut g_unif, mut g_gauss) = (vec![], vec![], vec![]);

    for &seed in &seeds {
        let config = TrainConfig { epochs: 5, batch_size: 128, lr0: 0.05, seed, ..TrainConfig::default() };
        let base = train_model(&spec, &config, TrainLoss::Hard, &id_train).unwrap();
        let (acc, e, a) = eval_all(&base.checkpoint.params);
        println!("seed {seed} baseline: acc {acc:.4} ece {e:.4} aurocs {a:.4?}");
        b_acc.push(acc); b_let.push(a[0]); b_unif.push(a[1]);

        for (alpha, bucket) in [(0.1, &mut l1_let), (0.3, &mut l3_let)] {
            let ls = train_model(&spec, &config, TrainLoss::LabelSmoothing { alpha }, &id_train).unwrap();
            let (lacc, le, la) = eval_all(&ls.checkpoint.params);
            println!("seed {seed} ls a={alpha}: acc {lacc:.4} ece {le:.4} aurocs {la:.4?}");
            bucket.push(la[0]);
        }

        let oe = finetune_oe(&base.checkpoint, &id_train, &letters_train, &OEConfig { lambda: 0.1 }, 2).unwrap();
        let (oacc, oece, oa) = eval_all(&oe.checkpoint.params);
        println!("seed {seed} oe: acc {oacc:.4} ece {oece:.4} aurocs {oa:.4?}");
        o_acc.push(oacc); o_let.push(oa[0]); o_unif.push(oa[1]);

        let st = distill(&oe.checkpoint, &id_train, 1.0, 1.0, &config, None).unwrap();
        let (sacc, sece, sa) = eval_all(&st.checkpoint.params);
        println!("seed {seed} od-student: acc {sacc:.4} ece {sece:.4} aurocs {sa:.4?}");
        s_acc.push(sacc);
        g_let.push((sa[0] - oa[0]).abs()); g_unif.push((sa[1] - oa[1]).abs()); g_gauss.push((sa[2] - oa[2]).abs());
    }
    println!("total {:?}", t0.elapsed());

    println!("C3: {} (acc {:.4} >= 0.98, unif {:.4} >= 0.90)",
        if median(&b_acc) >= 0.98 && median(&b_unif) >= 0.90 {"PASS"} else {"FAIL"}, median(&b_acc), median(&b_unif));
    let (m0, m1, m3) = (median(&b_let), median(&l1_let), median(&l3_let));
    println!("C4: {} (0: {m0:.4}, 0.1: {m1:.4}, 0.3: {m3:.4}; need 0.3 <= {:.4} and <= 0.1)",
        if m3 <= m0 - 0.02 && m3 <= m1 {"PASS"} else {"FAIL"}, m0 - 0.02);
    println!("C5: {} (oe letters {:.4} >= {:.4}; oe unif {:.4} >= {:.4})",
        if median(&o_let) >= m0 + 0.05 && median(&o_unif) >= median(&b_unif) - 0.02 {"PASS"} else {"FAIL"},
        median(&o_let), m0 + 0.05, median(&o_unif), median(&b_unif) - 0.02);
    println!("C6: {} (gaps letters {:.4} unif {:.4} gauss {:.4}, all <= 0.05)",
        if median(&g_let) <= 0.05 && median(&g_unif) <= 0.05 && median(&g_gauss) <= 0.05 {"PASS"} else {"FAIL"},
        median(&g_let), median(&g_unif), median(&g_gauss));
    println!("C7: {} (student {:.4} >= oe {:.4} - 0.003 and >= base {:.4} - 0.005)",
        if median(&s_acc) >= median(&o_acc) - 0.003 && median(&s_acc) >= median(&b_acc) - 0.005 {"PASS"} else {"FAIL"},
        median(&s_acc), median(&o_acc), median(&b_acc));
}
