// scratch calibration harness (not shipped)
use genco::trainer::*;
use std::sync::Mutex;
use std::sync::atomic::{AtomicUsize, Ordering};

fn run(cfg: TrainConfig, steps: u64) -> (f64, f64) {
    let mut state = TrainState::new(cfg).unwrap();
    for _ in 0..steps { train_step(&mut state).unwrap(); }
    let rec = evaluate(&mut state, None).unwrap();
    (rec.proxy_fid, rec.gap.train_holdout)
}

fn median(mut v: Vec<f64>) -> f64 { v.sort_by(f64::total_cmp); v[v.len()/2] }

fn pool<T: Send, F: Fn(usize) -> T + Sync>(n: usize, jobs: usize, f: F) -> Vec<T> where T: 'static {
    let results: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n { break; }
                let r = f(i);
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    results.into_inner().unwrap().into_iter().map(|o| o.unwrap()).collect()
}

fn main() {
    const NSEEDS: u64 = 15;
    let settings: Vec<(&str, f64, f64, usize)> = vec![
        ("P 1.0/1.0 b64", 1e-3, 1e-3, 64),
        ("Q 1.5/1.5 b64", 1.5e-3, 1.5e-3, 64),
        ("S 1.0/1.5 b32", 1e-3, 1.5e-3, 32),
    ];
    let variant = |cfg: &mut TrainConfig, vi: usize| match vi {
        0 => { cfg.weco_on = false; cfg.daco_on = false; }
        1 => { cfg.daco_on = false; }
        2 => { cfg.weco_on = false; }
        3 => {}
        4 => { cfg.daco_on = false; cfg.k_discriminators = 4; }
        _ => unreachable!(),
    };
    let mut work = Vec::new();
    for si in 0..settings.len() { for vi in 0..5usize { for seed in 1..=NSEEDS { work.push((si, vi, seed)); } } }
    let res = pool(work.len(), 4, |i| {
        let (si, vi, seed) = work[i];
        let (_, lr_g, lr_d, batch) = settings[si];
        let mut cfg = TrainConfig { seed, lr_g, lr_d, batch_size: batch, ..TrainConfig::default() };
        variant(&mut cfg, vi);
        run(cfg, 2000)
    });
    let n = NSEEDS as usize;
    let get = |si: usize, vi: usize, seed: usize| res[si*5*n + vi*n + (seed-1)];
    for (si, (name, ..)) in settings.iter().enumerate() {
        let med = |vi: usize| median((1..=n).map(|s| get(si, vi, s).0).collect());
        let medg = |vi: usize| median((1..=n).map(|s| get(si, vi, s).1).collect());
        let (mb, mw, md, mg, mk4) = (med(0), med(1), med(2), med(3), med(4));
        let mut fid_all = 0; let mut gap_all = 0; let mut k9_all = 0;
        let mut fid_first5 = 0; let mut gap_first5 = 0; let mut k9_first5 = 0;
        for s in 1..=n {
            let fw = (get(si,3,s).0 <= get(si,0,s).0) as u32;
            let gw = (get(si,3,s).1 <= get(si,0,s).1) as u32;
            let kw = (get(si,4,s).0 <= get(si,1,s).0) as u32;
            fid_all += fw; gap_all += gw; k9_all += kw;
            if s <= 5 { fid_first5 += fw; gap_first5 += gw; k9_first5 += kw; }
        }
        println!("{name}: fid med base {mb:.3} weco {mw:.3} daco {md:.3} genco {mg:.3} k4 {mk4:.3}");
        println!("   gap med base {:.3} genco {:.3} | c5-fid {fid_all}/{n} ({fid_first5})  c5-gap {gap_all}/{n} ({gap_first5})  c9 {k9_all}/{n} ({k9_first5})  c8margin {:.3}", medg(0), medg(3), mb-mg);
    }
}
