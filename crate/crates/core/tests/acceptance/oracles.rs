use candle_core::{DType, Device, Tensor};
use rand::Rng;

use nerfedit::config::{CoeffRanges, ExperimentConfig};
use nerfedit::encoder::{Encoder, EncoderArch};
use nerfedit::flow::{integrate, log_likelihood, rows_tensor, tensor_rows, LinearDynamics, MlpDynamics, Solver};
use nerfedit::generator::{composite_weights, volume_render_ray};
use nerfedit::inversion::{adv_losses_from_logits, rec_loss, CodePreds, CodeTargets, LatentDiscriminator, LossWeights};
use nerfedit::nn::ops::{scalar_f64, to_vec_f64};
use nerfedit::nn::{seeded_rng, ConvNetSpec, ParamStore, Pool, RandomFeatures};

use crate::Verdict;

fn t(rows: &[Vec<f64>]) -> Tensor {
    rows_tensor(rows, DType::F64).unwrap()
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

pub fn rendering() -> Verdict {
    let start = std::time::Instant::now();
    let mut rng = seeded_rng(11, "acceptance-rendering");
    let n_rays = 10_000;
    let s = 48;

    // homogeneous slab between two sample indices, empty space elsewhere
    let mut slab_err = 0.0f64;
    for _ in 0..n_rays {
        let deltas: Vec<f64> = (0..s).map(|_| rng.random_range(0.005..0.1)).collect();
        let sigma = rng.random_range(0.0..20.0);
        let a = rng.random_range(0..s);
        let b = rng.random_range(a..=s);
        let dens: Vec<f64> = (0..s).map(|i| if (a..b).contains(&i) { sigma } else { 0.0 }).collect();
        let feats = vec![vec![1.0]; s];
        let (_, trans) = volume_render_ray(&dens, &feats, &deltas).unwrap();
        let depth: f64 = deltas[a..b].iter().sum();
        slab_err = slab_err.max((trans - (-sigma * depth).exp()).abs());
    }

    // batched weights on random rays; the last sample of half the rays is opaque
    let mut sd = Vec::with_capacity(n_rays * s);
    for r in 0..n_rays {
        for i in 0..s {
            let v = if r % 2 == 0 && i == s - 1 { 1e4 } else { rng.random_range(0.0..0.3) };
            sd.push(v);
        }
    }
    let sdt = Tensor::from_vec(sd.clone(), (n_rays, s), &Device::Cpu).unwrap();
    let (w, last) = composite_weights(&sdt).unwrap();
    let w = to_vec_f64(&w).unwrap();
    let last = to_vec_f64(&last).unwrap();
    let mut sum_err = 0.0f64;
    let mut opaque_err = 0.0f64;
    let mut scalar_err = 0.0f64;
    for r in 0..n_rays {
        let row = &w[r * s..(r + 1) * s];
        let total: f64 = row.iter().sum();
        sum_err = sum_err.max((total + last[r] - 1.0).abs());
        if r % 2 == 0 {
            opaque_err = opaque_err.max((total - 1.0).abs());
        }
        if r % 97 == 0 {
            // one-hot features recover the per-sample weights of the scalar path
            let feats: Vec<Vec<f64>> = (0..s).map(|i| (0..s).map(|j| (i == j) as u8 as f64).collect()).collect();
            let (acc, _) = volume_render_ray(&sd[r * s..(r + 1) * s], &feats, &vec![1.0; s]).unwrap();
            for (x, y) in acc.iter().zip(row) {
                scalar_err = scalar_err.max((x - y).abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = slab_err < 1e-9 && sum_err < 1e-6 && opaque_err < 1e-6 && scalar_err < 1e-9 && secs < 10.0;
    Verdict::new(
        pass,
        format!(
            "slab transmittance err {slab_err:.2e}, max |Σw + T − 1| {sum_err:.2e}, opaque-terminated |Σw − 1| {opaque_err:.2e}, batched vs per-ray {scalar_err:.2e}, {secs:.2} s"
        ),
    )
}

pub fn losses() -> Verdict {
    let dev = Device::Cpu;
    let cfg = ExperimentConfig::default();
    let weights = LossWeights::from(&cfg.inversion);
    let defaults_ok = weights.lambda_style == 0.5 && weights.lambda_view == 5.0;

    let (b, r, dw, dd) = (3usize, 8usize, 6usize, 5usize);
    let x = Tensor::rand(0f64, 1.0, (b, 3, r, r), &dev).unwrap();
    let y = Tensor::rand(0f64, 1.0, (b, 3, r, r), &dev).unwrap();
    let code = |k| Tensor::randn(0f64, 1.0, (b, k), &dev).unwrap();
    let (pg, pt, pd, tg, tt, td) = (code(dw), code(dw), code(dd), code(dw), code(dw), code(dd));
    let feats = RandomFeatures::new(&[4, 6], 5, DType::F64).unwrap();
    let preds = CodePreds { w_geo: &pg, w_tex: &pt, d: &pd };
    let targets = CodeTargets { w_geo: &tg, w_tex: &tt, d: &td };
    let got = rec_loss(&x, &y, &preds, Some(&targets), &weights, &feats).unwrap();

    // brute force: explicit per-sample sums over flattened vectors
    let rows = |t: &Tensor| -> Vec<Vec<f64>> {
        let v = to_vec_f64(t).unwrap();
        let k = v.len() / b;
        v.chunks(k).map(|c| c.to_vec()).collect()
    };
    let l2 = |a: &[f64], c: &[f64]| a.iter().zip(c).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
    let l1 = |a: &[f64], c: &[f64]| a.iter().zip(c).map(|(p, q)| (p - q).abs()).sum::<f64>();
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let (xr, yr) = (rows(&x), rows(&y));
    let bf_l2 = mean((0..b).map(|i| l2(&xr[i], &yr[i])).collect());
    let fx = feats.features(&x).unwrap();
    let fy = feats.features(&y).unwrap();
    let mut per = vec![0.0; b];
    for (a, c) in fx.iter().zip(&fy).skip(1) {
        let (ar, cr) = (rows(a), rows(c));
        for i in 0..b {
            per[i] += l2(&ar[i], &cr[i]) / (ar[i].len() as f64).sqrt();
        }
    }
    let bf_perc = mean(per);
    let bf_style = mean((0..b).map(|i| l1(&rows(&pg)[i], &rows(&tg)[i]) + l1(&rows(&pt)[i], &rows(&tt)[i])).collect());
    let bf_view = mean((0..b).map(|i| l1(&rows(&pd)[i], &rows(&td)[i])).collect());
    let bf_total = bf_l2 + bf_perc + 0.5 * bf_style + 5.0 * bf_view;
    let rec_err = [
        (got.l2, bf_l2),
        (got.perceptual, bf_perc),
        (got.style, bf_style),
        (got.view, bf_view),
        (got.total_value, bf_total),
        (scalar_f64(&got.total).unwrap(), bf_total),
    ]
    .iter()
    .map(|(a, c)| (a - c).abs())
    .fold(0.0, f64::max);

    // adversarial terms on a discriminator's logits, including saturated ones
    let disc = LatentDiscriminator::new(dw, 16, 3, DType::F64, &mut seeded_rng(3, "acceptance-disc")).unwrap();
    let real_g = code(dw);
    let real_t = code(dw);
    let (ld, le) = disc.adv_losses((&real_g, &real_t), (&pg, &pt)).unwrap();
    let lr = to_vec_f64(&disc.logits(&real_g, &real_t).unwrap()).unwrap();
    let lf = to_vec_f64(&disc.logits(&pg, &pt).unwrap()).unwrap();
    let bf_d = lr.iter().map(|&l| softplus(-l)).sum::<f64>() / b as f64 + lf.iter().map(|&l| softplus(l)).sum::<f64>() / b as f64;
    let bf_e = lf.iter().map(|&l| softplus(-l)).sum::<f64>() / b as f64;
    let extreme = [-800.0, -30.0, 0.0, 30.0, 800.0];
    let et = Tensor::new(&extreme, &dev).unwrap();
    let (xd, xe) = adv_losses_from_logits(&et, &et.neg().unwrap()).unwrap();
    let bf_xd = extreme.iter().map(|&l| softplus(-l) + softplus(-l)).sum::<f64>() / 5.0;
    let bf_xe = extreme.iter().map(|&l| softplus(l)).sum::<f64>() / 5.0;
    let adv_err = [
        (scalar_f64(&ld).unwrap(), bf_d),
        (scalar_f64(&le).unwrap(), bf_e),
        (scalar_f64(&xd).unwrap(), bf_xd),
        (scalar_f64(&xe).unwrap(), bf_xe),
    ]
    .iter()
    .map(|(a, c)| (a - c).abs() / c.abs().max(1.0))
    .fold(0.0, f64::max);

    Verdict::new(
        defaults_ok && rec_err < 1e-9 && adv_err < 1e-9,
        format!(
            "reconstruction max err {rec_err:.2e}, adversarial max err {adv_err:.2e}, default (λ_style, λ_view) = ({}, {})",
            weights.lambda_style, weights.lambda_view
        ),
    )
}

/// Central differences on `k` entries of every listed parameter.
fn fd_check(store: &ParamStore, names: &[String], loss: &dyn Fn() -> Tensor, picks: usize) -> f64 {
    let l = loss();
    let grads = l.backward().unwrap();
    let eps = 1e-6;
    let mut worst = 0.0f64;
    for name in names {
        let var = store.var(name).unwrap();
        let analytic = match grads.get(var.as_tensor()) {
            Some(g) => to_vec_f64(g).unwrap(),
            None => vec![0.0; var.as_tensor().elem_count()],
        };
        let base = store.flat_values(name).unwrap();
        let step = (base.len() / picks).max(1);
        for k in (0..base.len()).step_by(step).take(picks) {
            let mut p = base.clone();
            p[k] += eps;
            store.set_flat_values(name, p).unwrap();
            let fp = scalar_f64(&loss()).unwrap();
            let mut m = base.clone();
            m[k] -= eps;
            store.set_flat_values(name, m).unwrap();
            let fm = scalar_f64(&loss()).unwrap();
            store.set_flat_values(name, base.clone()).unwrap();
            let fd = (fp - fm) / (2.0 * eps);
            if fd.abs().max(analytic[k].abs()) > 1e-7 {
                worst = worst.max(rel_err(fd, analytic[k]));
            }
        }
    }
    worst
}

fn micro_encoder() -> Encoder {
    let arch = EncoderArch {
        d_w: 6,
        d_d: 7,
        resolution: 8,
        hidden: 10,
        geo_layers: 2,
        tex_layers: 2,
        cam_layers: 2,
        slope: 0.2,
        detail: ConvNetSpec { in_channels: 3, in_res: 8, channels: vec![3, 4], head: vec![6], pool: Pool::Mean, slope: 0.2 },
        ranges: CoeffRanges::default(),
    };
    Encoder::init(arch, false, 17, DType::F64).unwrap()
}

fn perturbed_dynamics(d: usize, k: usize, hidden: usize, seed: u64) -> (ParamStore, MlpDynamics) {
    let mut s = ParamStore::new(DType::F64);
    MlpDynamics::init(&mut s, "f", d, k, hidden, &mut seeded_rng(seed, "acceptance-flow")).unwrap();
    let mut r = seeded_rng(seed + 1, "acceptance-flow-perturb");
    for n in ["f.l3.w", "f.l3.b", "f.skip"] {
        let vals = s.flat_values(n).unwrap();
        s.set_flat_values(n, vals.iter().map(|_| r.random_range(-0.3..0.3)).collect()).unwrap();
    }
    let m = MlpDynamics::load(&s, "f").unwrap();
    (s, m)
}

pub fn gradients() -> Verdict {
    let start = std::time::Instant::now();
    let dev = Device::Cpu;

    // encoder: projection of all outputs onto fixed random directions
    let enc = micro_encoder();
    let x = Tensor::rand(0f64, 1.0, (2, 3, 8, 8), &dev).unwrap();
    let g = Tensor::rand(-1f64, 1.0, (2, nerfedit::scene::D_GEO), &dev).unwrap();
    let tx = Tensor::rand(-1f64, 1.0, (2, nerfedit::scene::D_TEX), &dev).unwrap();
    let c = Tensor::rand(-1f64, 1.0, (2, nerfedit::scene::D_VIEW), &dev).unwrap();
    let (ug, ut, ud) = (
        Tensor::randn(0f64, 1.0, (2, 6), &dev).unwrap(),
        Tensor::randn(0f64, 1.0, (2, 6), &dev).unwrap(),
        Tensor::randn(0f64, 1.0, (2, 7), &dev).unwrap(),
    );
    let enc_loss = || {
        let o = enc.encode_tensor(&x, &g, &tx, &c).unwrap();
        ((o.w_geo * &ug).unwrap().sum_all().unwrap() + (o.w_tex * &ut).unwrap().sum_all().unwrap()).unwrap()
            .add(&(o.d * &ud).unwrap().sum_all().unwrap())
            .unwrap()
    };
    let enc_names: Vec<String> = enc.store().names().map(String::from).collect();
    let enc_err = fd_check(enc.store(), &enc_names, &enc_loss, 3);

    // dynamics: negative log-likelihood through the RK4 solver
    let (store, dynm) = perturbed_dynamics(4, 2, 8, 23);
    let w = t(&[vec![0.3, -0.7, 1.1, 0.2], vec![-1.0, 0.4, 0.0, 0.6]]);
    let a = t(&[vec![0.2, 0.9], vec![0.6, 0.3]]);
    let solver = Solver { t0: 0.0, t1: 1.0, steps: 6 };
    let dyn_loss = || log_likelihood(&dynm, &w, &a, &solver, true).unwrap().sum_all().unwrap().neg().unwrap();
    let dyn_names: Vec<String> = store.names().map(String::from).collect();
    let dyn_err = fd_check(&store, &dyn_names, &dyn_loss, 4);

    // losses: reconstruction objective w.r.t. the reconstruction and predicted codes
    let feats = RandomFeatures::new(&[3, 4], 9, DType::F64).unwrap();
    let weights = LossWeights { lambda_style: 0.5, lambda_view: 5.0, lambda_adv: 0.1 };
    let target_img = Tensor::rand(0f64, 1.0, (2, 3, 4, 4), &dev).unwrap();
    let mut ls = ParamStore::new(DType::F64);
    ls.insert("recon", Tensor::rand(0f64, 1.0, (2, 3, 4, 4), &dev).unwrap()).unwrap();
    ls.insert("w_geo", Tensor::randn(0f64, 1.0, (2, 5), &dev).unwrap()).unwrap();
    ls.insert("w_tex", Tensor::randn(0f64, 1.0, (2, 5), &dev).unwrap()).unwrap();
    ls.insert("d", Tensor::randn(0f64, 1.0, (2, 3), &dev).unwrap()).unwrap();
    let (tg, tt, td) = (
        Tensor::randn(0f64, 1.0, (2, 5), &dev).unwrap(),
        Tensor::randn(0f64, 1.0, (2, 5), &dev).unwrap(),
        Tensor::randn(0f64, 1.0, (2, 3), &dev).unwrap(),
    );
    let disc = LatentDiscriminator::new(5, 8, 2, DType::F64, &mut seeded_rng(4, "acceptance-grad-disc")).unwrap();
    let loss_fn = || {
        let (r, wg, wt, d) = (ls.get("recon").unwrap(), ls.get("w_geo").unwrap(), ls.get("w_tex").unwrap(), ls.get("d").unwrap());
        let preds = CodePreds { w_geo: &wg, w_tex: &wt, d: &d };
        let targets = CodeTargets { w_geo: &tg, w_tex: &tt, d: &td };
        let rec = rec_loss(&target_img, &r, &preds, Some(&targets), &weights, &feats).unwrap();
        let (_, le) = disc.adv_losses((&tg, &tt), (&wg, &wt)).unwrap();
        (rec.total + (le * 0.1).unwrap()).unwrap()
    };
    let loss_names: Vec<String> = ls.names().map(String::from).collect();
    let loss_err = fd_check(&ls, &loss_names, &loss_fn, 6);

    // discriminator loss w.r.t. its own parameters
    let dl = || disc.adv_losses((&tg, &tt), (&ls.get("w_geo").unwrap(), &ls.get("w_tex").unwrap())).unwrap().0;
    let disc_names: Vec<String> = disc.store().names().map(String::from).collect();
    let disc_err = fd_check(disc.store(), &disc_names, &dl, 3);

    let secs = start.elapsed().as_secs_f64();
    let worst = enc_err.max(dyn_err).max(loss_err).max(disc_err);
    Verdict::new(
        worst < 1e-3 && secs < 120.0,
        format!(
            "max relative error: encoder {enc_err:.2e}, dynamics {dyn_err:.2e}, reconstruction+adversarial {loss_err:.2e}, discriminator {disc_err:.2e}; {secs:.1} s"
        ),
    )
}

/// `exp(A)` by scaling and squaring of a Taylor series.
fn expm(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let norm: f64 = a.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let k = (norm.max(1.0).log2().ceil() as i32 + 4).max(0);
    let s = 2f64.powi(k);
    let mul = |x: &[Vec<f64>], y: &[Vec<f64>]| -> Vec<Vec<f64>> {
        (0..n).map(|i| (0..n).map(|j| (0..n).map(|l| x[i][l] * y[l][j]).sum()).collect()).collect()
    };
    let scaled: Vec<Vec<f64>> = a.iter().map(|r| r.iter().map(|v| v / s).collect()).collect();
    let mut out: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect()).collect();
    let mut term = out.clone();
    for m in 1..30 {
        term = mul(&term, &scaled).into_iter().map(|r| r.into_iter().map(|v| v / m as f64).collect()).collect();
        for i in 0..n {
            for j in 0..n {
                out[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..k {
        out = mul(&out, &out);
    }
    out
}

fn log_abs_det(mut m: Vec<Vec<f64>>) -> f64 {
    let n = m.len();
    let mut acc = 0.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        m.swap(c, p);
        let piv = m[c][c];
        acc += piv.abs().ln();
        for r in c + 1..n {
            let f = m[r][c] / piv;
            for k in c..n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    acc
}

pub fn cnf() -> Verdict {
    // zero dynamics: exact identity, including the trace integral
    let v = t(&[vec![0.3, -1.2, 2.0, 0.0, 1e-9, -4.5]]);
    let a = t(&[vec![0.5, 0.5]]);
    let zero = LinearDynamics::zero(6).unwrap();
    let z = integrate(&zero, &v, &a, 0.0, 1.0, 40, true, true).unwrap();
    let fresh = {
        let mut s = ParamStore::new(DType::F64);
        MlpDynamics::init(&mut s, "f", 6, 2, 16, &mut seeded_rng(1, "acceptance-zero")).unwrap();
        let m = MlpDynamics::load(&s, "f").unwrap();
        integrate(&m, &v, &a, 1.0, 0.0, 40, false, true).unwrap().v
    };
    let identity_ok = tensor_rows(&z.v).unwrap() == tensor_rows(&v).unwrap()
        && to_vec_f64(z.trace_integral.as_ref().unwrap()).unwrap() == vec![0.0]
        && tensor_rows(&fresh).unwrap() == tensor_rows(&v).unwrap();

    // linear dynamics against a series matrix exponential
    let am = vec![vec![-0.4, 1.1, 0.2], vec![-0.9, -0.1, 0.5], vec![0.3, -0.6, 0.2]];
    let lin = LinearDynamics::new(&am).unwrap();
    let v0 = [0.7, -1.1, 0.4];
    let got = tensor_rows(&integrate(&lin, &t(&[v0.to_vec()]), &t(&[vec![0.0]]), 0.0, 1.0, 40, false, true).unwrap().v).unwrap()[0].clone();
    let e = expm(&am);
    let want: Vec<f64> = (0..3).map(|i| (0..3).map(|j| e[i][j] * v0[j]).sum()).collect();
    let lin_err = got.iter().zip(&want).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
        / want.iter().map(|q| q * q).sum::<f64>().sqrt();

    // trace integral against the log-determinant of a finite-difference Jacobian
    let (_, m) = perturbed_dynamics(6, 2, 12, 31);
    let a = t(&[vec![0.25, 0.75]]);
    let w0 = vec![0.4, -0.2, 0.9, -1.1, 0.05, 0.6];
    let run = |w: &[f64]| integrate(&m, &t(&[w.to_vec()]), &a, 1.0, 0.0, 40, true, true).unwrap();
    let trace_int = to_vec_f64(run(&w0).trace_integral.as_ref().unwrap()).unwrap()[0];
    let eps = 1e-5;
    let mut jac = vec![vec![0.0; 6]; 6];
    for j in 0..6 {
        let mut p = w0.clone();
        p[j] += eps;
        let mut q = w0.clone();
        q[j] -= eps;
        let fp = tensor_rows(&run(&p).v).unwrap()[0].clone();
        let fq = tensor_rows(&run(&q).v).unwrap()[0].clone();
        for i in 0..6 {
            jac[i][j] = (fp[i] - fq[i]) / (2.0 * eps);
        }
    }
    let logdet = log_abs_det(jac);
    let det_err = (trace_int - logdet).abs();

    // invert then edit with unchanged attributes
    let (_, m) = perturbed_dynamics(6, 2, 16, 47);
    let ws = t(&[vec![0.5, -0.4, 1.3, 0.2, -0.9, 0.6], vec![-1.5, 0.3, 0.2, 0.8, 0.1, -0.2]]);
    let a2 = t(&[vec![0.1, 0.8], vec![0.7, 0.2]]);
    let zs = integrate(&m, &ws, &a2, 1.0, 0.0, 40, false, true).unwrap().v;
    let back = integrate(&m, &zs, &a2, 0.0, 1.0, 40, false, true).unwrap().v;
    let rt_err = tensor_rows(&ws)
        .unwrap()
        .iter()
        .zip(tensor_rows(&back).unwrap())
        .map(|(x, y)| {
            let n: f64 = x.iter().map(|u| u * u).sum::<f64>().sqrt();
            x.iter().zip(&y).map(|(u, w)| (u - w).powi(2)).sum::<f64>().sqrt() / n
        })
        .fold(0.0, f64::max);
    let moved = tensor_rows(&zs).unwrap() != tensor_rows(&ws).unwrap();

    Verdict::new(
        identity_ok && lin_err < 1e-6 && det_err < 1e-4 && rt_err < 1e-5 && moved,
        format!(
            "zero-dynamics identity {}, matrix exponential rel err {lin_err:.2e}, trace vs FD log-det {det_err:.2e}, round trip rel err {rt_err:.2e}",
            if identity_ok { "exact" } else { "BROKEN" }
        ),
    )
}
