//! Independent naive reimplementations of the evaluation metrics, written
//! directly from the published formulas with per-position loops. They share
//! no window construction, filtering, or accumulation code with the library
//! implementations they check.

/// Luminance plane of a planar RGB image, in the given scale.
pub fn luma(planes: &[&[f64]], scale: f64) -> Vec<f64> {
    match planes.len() {
        1 => planes[0].iter().map(|&v| v * scale).collect(),
        3 => (0..planes[0].len())
            .map(|i| (0.299 * planes[0][i] + 0.587 * planes[1][i] + 0.114 * planes[2][i]) * scale)
            .collect(),
        n => panic!("unexpected channel count {n}"),
    }
}

pub fn std_pop(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let m = y.iter().sum::<f64>() / n;
    (y.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / n).sqrt()
}

pub fn entropy_bits(y255: &[f64]) -> f64 {
    let mut hist = vec![0usize; 256];
    for &v in y255 {
        hist[(v.round().clamp(0.0, 255.0)) as usize] += 1;
    }
    let n = y255.len() as f64;
    hist.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(&x, &y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|&x| (x - ma) * (x - ma)).sum();
    let vb: f64 = b.iter().map(|&y| (y - mb) * (y - mb)).sum();
    cov / (va.sqrt() * vb.sqrt())
}

fn gauss2d(side: usize, sigma: f64) -> Vec<f64> {
    let half = (side as f64 - 1.0) / 2.0;
    let mut g: Vec<f64> = (0..side * side)
        .map(|i| {
            let y = (i / side) as f64 - half;
            let x = (i % side) as f64 - half;
            (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Mean SSIM and mean contrast-structure over valid positions of one plane
/// pair in `[0, 1]`, computed position by position.
pub fn ssim_naive(x: &[f64], y: &[f64], h: usize, w: usize, side: usize, sigma: f64) -> (f64, f64) {
    let win = gauss2d(side, sigma);
    let c1 = 0.01f64 * 0.01;
    let c2 = 0.03f64 * 0.03;
    let mut ssim_sum = 0.0;
    let mut cs_sum = 0.0;
    let mut count = 0.0;
    for oy in 0..=(h - side) {
        for ox in 0..=(w - side) {
            let mut mx = 0.0;
            let mut my = 0.0;
            for ky in 0..side {
                for kx in 0..side {
                    let wv = win[ky * side + kx];
                    mx += wv * x[(oy + ky) * w + ox + kx];
                    my += wv * y[(oy + ky) * w + ox + kx];
                }
            }
            let mut vx = 0.0;
            let mut vy = 0.0;
            let mut cxy = 0.0;
            for ky in 0..side {
                for kx in 0..side {
                    let wv = win[ky * side + kx];
                    let dx = x[(oy + ky) * w + ox + kx] - mx;
                    let dy = y[(oy + ky) * w + ox + kx] - my;
                    vx += wv * dx * dx;
                    vy += wv * dy * dy;
                    cxy += wv * dx * dy;
                }
            }
            let l = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
            let cs = (2.0 * cxy + c2) / (vx + vy + c2);
            ssim_sum += l * cs;
            cs_sum += cs;
            count += 1.0;
        }
    }
    (ssim_sum / count, cs_sum / count)
}

fn half(plane: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let oh = h / 2;
    let ow = w / 2;
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (plane[2 * y * w + 2 * x]
                + plane[2 * y * w + 2 * x + 1]
                + plane[(2 * y + 1) * w + 2 * x]
                + plane[(2 * y + 1) * w + 2 * x + 1])
                / 4.0;
        }
    }
    (out, oh, ow)
}

/// Multi-scale SSIM over `[0, 1]` luminance planes with the canonical
/// weights; the scale count shrinks when the window no longer fits, with the
/// used weights renormalized.
pub fn ms_ssim_naive(x: &[f64], y: &[f64], h: usize, w: usize) -> f64 {
    const WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
    let mut scales = 0;
    let mut dim = h.min(w);
    while scales < 5 && dim >= 11 {
        scales += 1;
        dim /= 2;
    }
    assert!(scales >= 1, "image too small for the oracle");
    let wsum: f64 = WEIGHTS[..scales].iter().sum();
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    let (mut hh, mut ww) = (h, w);
    let mut value = 1.0;
    for s in 0..scales {
        let (mssim, mcs) = ssim_naive(&xs, &ys, hh, ww, 11, 1.5);
        let term = if s + 1 == scales { mssim } else { mcs };
        value *= term.max(0.0).powf(WEIGHTS[s] / wsum);
        if s + 1 < scales {
            let (nx, nh, nw) = half(&xs, hh, ww);
            let (ny, _, _) = half(&ys, hh, ww);
            xs = nx;
            ys = ny;
            hh = nh;
            ww = nw;
        }
    }
    value
}

/// Per-patch MEF-SSIM over `[0, 1]` planes: desired patch from the stronger
/// mean-removed source strength and the summed source structure, scored by
/// the contrast-structure term.
pub fn mef_ssim_naive(
    f: &[f64],
    u: &[f64],
    o: &[f64],
    h: usize,
    w: usize,
    patch: usize,
    stride: usize,
) -> f64 {
    let c2 = 0.03f64 * 0.03;
    let n = (patch * patch) as f64;
    let mut total = 0.0;
    let mut count = 0.0;
    let mut oy = 0;
    while oy + patch <= h {
        let mut ox = 0;
        while ox + patch <= w {
            let gather = |p: &[f64]| -> Vec<f64> {
                let mut v = Vec::with_capacity(patch * patch);
                for ky in 0..patch {
                    for kx in 0..patch {
                        v.push(p[(oy + ky) * w + ox + kx]);
                    }
                }
                v
            };
            let pu = gather(u);
            let po = gather(o);
            let pf = gather(f);
            let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
            let (mu, mo, mf) = (mean(&pu), mean(&po), mean(&pf));
            let du: Vec<f64> = pu.iter().map(|&v| v - mu).collect();
            let dov: Vec<f64> = po.iter().map(|&v| v - mo).collect();
            let df: Vec<f64> = pf.iter().map(|&v| v - mf).collect();
            let norm = |v: &[f64]| v.iter().map(|&a| a * a).sum::<f64>().sqrt();
            let chat = norm(&du).max(norm(&dov));
            let sum: Vec<f64> = du.iter().zip(&dov).map(|(&a, &b)| a + b).collect();
            let sn = norm(&sum);
            let xhat: Vec<f64> = if sn > 0.0 {
                sum.iter().map(|&v| chat * v / sn).collect()
            } else {
                vec![0.0; sum.len()]
            };
            let dot: f64 = xhat.iter().zip(&df).map(|(&a, &b)| a * b).sum();
            let bx: f64 = xhat.iter().map(|&a| a * a).sum();
            let by: f64 = df.iter().map(|&a| a * a).sum();
            total += (2.0 * dot / n + c2) / (bx / n + by / n + c2);
            count += 1.0;
            ox += stride;
        }
        oy += stride;
    }
    total / count
}

/// Pixel-domain VIF of `dist` against `reference` (`[0, 255]` planes),
/// following the published four-scale procedure step by step.
pub fn vifp_naive(reference: &[f64], dist: &[f64], h: usize, w: usize) -> f64 {
    let filt = |p: &[f64], ph: usize, pw: usize, side: usize| -> (Vec<f64>, usize, usize) {
        let win = gauss2d(side, side as f64 / 5.0);
        let oh = ph - side + 1;
        let ow = pw - side + 1;
        let mut out = vec![0.0; oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = 0.0;
                for ky in 0..side {
                    for kx in 0..side {
                        acc += win[ky * side + kx] * p[(y + ky) * pw + x + kx];
                    }
                }
                out[y * ow + x] = acc;
            }
        }
        (out, oh, ow)
    };
    let dec = |p: &[f64], ph: usize, pw: usize| -> (Vec<f64>, usize, usize) {
        let oh = ph.div_ceil(2);
        let ow = pw.div_ceil(2);
        let mut out = vec![0.0; oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                out[y * ow + x] = p[(2 * y) * pw + 2 * x];
            }
        }
        (out, oh, ow)
    };
    let mut r = reference.to_vec();
    let mut d = dist.to_vec();
    let (mut rh, mut rw) = (h, w);
    let mut num = 0.0;
    let mut den = 0.0;
    for scale in 1..=4usize {
        let side = (1usize << (4 - scale + 1)) + 1;
        if scale > 1 {
            let (fr, fh, fw) = filt(&r, rh, rw, side);
            let (dr, nh, nw) = dec(&fr, fh, fw);
            let (fd, _, _) = filt(&d, rh, rw, side);
            let (dd, _, _) = dec(&fd, fh, fw);
            r = dr;
            d = dd;
            rh = nh;
            rw = nw;
        }
        let (mu1, mh, mw) = filt(&r, rh, rw, side);
        let (mu2, _, _) = filt(&d, rh, rw, side);
        let sq: Vec<f64> = r.iter().map(|&v| v * v).collect();
        let (rr, _, _) = filt(&sq, rh, rw, side);
        let sq: Vec<f64> = d.iter().map(|&v| v * v).collect();
        let (dd2, _, _) = filt(&sq, rh, rw, side);
        let pr: Vec<f64> = r.iter().zip(&d).map(|(&a, &b)| a * b).collect();
        let (rd, _, _) = filt(&pr, rh, rw, side);
        for i in 0..mh * mw {
            let s1 = (rr[i] - mu1[i] * mu1[i]).max(0.0);
            let s2 = (dd2[i] - mu2[i] * mu2[i]).max(0.0);
            let s12 = rd[i] - mu1[i] * mu2[i];
            let mut g = s12 / (s1 + 1e-10);
            let mut sv = s2 - g * s12;
            let mut s1c = s1;
            if s1 < 1e-10 {
                g = 0.0;
                sv = s2;
                s1c = 0.0;
            }
            if s2 < 1e-10 {
                g = 0.0;
                sv = 0.0;
            }
            if g < 0.0 {
                sv = s2;
                g = 0.0;
            }
            if sv < 1e-10 {
                sv = 1e-10;
            }
            num += (1.0 + g * g * s1c / (sv + 2.0)).log10();
            den += (1.0 + s1c / 2.0).log10();
        }
    }
    num / den
}

fn normcdf(x: f64, mu: f64, sigma: f64) -> f64 {
    0.5 * (1.0 + libm::erf((x - mu) / (sigma * core::f64::consts::SQRT_2)))
}

fn betapdf(x: f64, a: f64, b: f64) -> f64 {
    if !(0.0..=1.0).contains(&x) {
        return 0.0;
    }
    let lb = libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b);
    ((a - 1.0) * x.max(1e-300).ln() + (b - 1.0) * (1.0 - x).max(1e-300).ln() - lb).exp()
}

/// Tone-mapped quality index over `[0, 255]` planes (fused scored against
/// the reference).
pub fn tmqi_naive(fused: &[f64], reference: &[f64], h: usize, w: usize) -> f64 {
    const WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
    let slocal = |x: &[f64], y: &[f64], hh: usize, ww: usize, sf: f64| -> f64 {
        let win = gauss2d(11, 1.5);
        let csf = 100.0 * 2.6 * (0.0192 + 0.114 * sf) * (-(0.114f64 * sf).powf(1.1)).exp();
        let u = 128.0 / (1.4 * csf);
        let sg = u / 3.0;
        let mut total = 0.0;
        let mut count = 0.0;
        for oy in 0..=(hh - 11) {
            for ox in 0..=(ww - 11) {
                let mut mx = 0.0;
                let mut my = 0.0;
                for ky in 0..11 {
                    for kx in 0..11 {
                        let wv = win[ky * 11 + kx];
                        mx += wv * x[(oy + ky) * ww + ox + kx];
                        my += wv * y[(oy + ky) * ww + ox + kx];
                    }
                }
                let mut vx = 0.0;
                let mut vy = 0.0;
                let mut cxy = 0.0;
                for ky in 0..11 {
                    for kx in 0..11 {
                        let wv = win[ky * 11 + kx];
                        let dx = x[(oy + ky) * ww + ox + kx] - mx;
                        let dy = y[(oy + ky) * ww + ox + kx] - my;
                        vx += wv * dx * dx;
                        vy += wv * dy * dy;
                        cxy += wv * dx * dy;
                    }
                }
                let s1 = vx.max(0.0).sqrt();
                let s2 = vy.max(0.0).sqrt();
                let p1 = normcdf(s1, u, sg);
                let p2 = normcdf(s2, u, sg);
                total += ((2.0 * p1 * p2 + 0.01) / (p1 * p1 + p2 * p2 + 0.01))
                    * ((cxy + 10.0) / (s1 * s2 + 10.0));
                count += 1.0;
            }
        }
        (total / count).clamp(0.0, 1.0)
    };

    let mut scales = 0;
    let mut dim = h.min(w);
    while scales < 5 && dim >= 11 {
        scales += 1;
        dim /= 2;
    }
    let wsum: f64 = WEIGHTS[..scales].iter().sum();
    let mut x = reference.to_vec();
    let mut y = fused.to_vec();
    let (mut hh, mut ww) = (h, w);
    let mut s = 1.0;
    for k in 0..scales {
        let sf = 32.0 / 2.0f64.powi(k as i32);
        s *= slocal(&x, &y, hh, ww, sf).powf(WEIGHTS[k] / wsum);
        if k + 1 < scales {
            let (nx, nh, nw) = half(&x, hh, ww);
            let (ny, _, _) = half(&y, hh, ww);
            x = nx;
            y = ny;
            hh = nh;
            ww = nw;
        }
    }

    // Naturalness over the fused image.
    let n = fused.len() as f64;
    let mean = fused.iter().sum::<f64>() / n;
    let mut sig_sum = 0.0;
    let mut blocks = 0.0;
    let mut by = 0;
    while by < h {
        let bh = 11.min(h - by);
        let mut bx = 0;
        while bx < w {
            let bw = 11.min(w - bx);
            let cnt = (bh * bw) as f64;
            let mut sum = 0.0;
            for yy in 0..bh {
                for xx in 0..bw {
                    sum += fused[(by + yy) * w + bx + xx];
                }
            }
            let m = sum / cnt;
            let mut var = 0.0;
            for yy in 0..bh {
                for xx in 0..bw {
                    let d = fused[(by + yy) * w + bx + xx] - m;
                    var += d * d;
                }
            }
            sig_sum += if cnt > 1.0 { (var / (cnt - 1.0)).sqrt() } else { 0.0 };
            blocks += 1.0;
            bx += 11;
        }
        by += 11;
    }
    let sig = sig_sum / blocks;
    let pm = (-(mean - 115.94) * (mean - 115.94) / (2.0 * 27.99 * 27.99)).exp();
    let pd = betapdf(sig / 64.29, 4.4, 10.1) / betapdf(3.4 / 12.5, 4.4, 10.1);
    let nat = (pm * pd).clamp(0.0, 1.0);

    0.8012 * s.powf(0.3046) + (1.0 - 0.8012) * nat.powf(0.7088)
}

/// Edge-preservation fusion quality over `[0, 1]` luminance planes.
pub fn qabf_naive(f: &[f64], u: &[f64], o: &[f64], h: usize, w: usize) -> f64 {
    let sob = |p: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let mut g = vec![0.0; h * w];
        let mut a = vec![0.0; h * w];
        let at = |r: isize, c: isize| -> f64 {
            p[(r.clamp(0, h as isize - 1) as usize) * w + c.clamp(0, w as isize - 1) as usize]
        };
        for r in 0..h as isize {
            for c in 0..w as isize {
                let gx = (at(r - 1, c + 1) - at(r - 1, c - 1))
                    + 2.0 * (at(r, c + 1) - at(r, c - 1))
                    + (at(r + 1, c + 1) - at(r + 1, c - 1));
                let gy = (at(r + 1, c - 1) - at(r - 1, c - 1))
                    + 2.0 * (at(r + 1, c) - at(r - 1, c))
                    + (at(r + 1, c + 1) - at(r - 1, c + 1));
                let i = (r * w as isize + c) as usize;
                g[i] = (gx * gx + gy * gy).sqrt();
                a[i] = if gx == 0.0 && gy == 0.0 {
                    0.0
                } else {
                    let mut ang = gy.atan2(gx);
                    if ang > core::f64::consts::FRAC_PI_2 {
                        ang -= core::f64::consts::PI;
                    } else if ang <= -core::f64::consts::FRAC_PI_2 {
                        ang += core::f64::consts::PI;
                    }
                    ang
                };
            }
        }
        (g, a)
    };
    let (gf, af) = sob(f);
    let (gu, au) = sob(u);
    let (go, ao) = sob(o);
    let pres = |gs: f64, as_: f64, gff: f64, aff: f64| -> f64 {
        if gff == 0.0 || gs == 0.0 {
            return 0.0;
        }
        let gr = if gs > gff { gff / gs } else { gs / gff };
        let ar = 1.0 - (as_ - aff).abs() / core::f64::consts::FRAC_PI_2;
        (0.9994 / (1.0 + (-15.0 * (gr - 0.5)).exp()))
            * (0.9879 / (1.0 + (-22.0 * (ar - 0.8)).exp()))
    };
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..h * w {
        num += pres(gu[i], au[i], gf[i], af[i]) * gu[i] + pres(go[i], ao[i], gf[i], af[i]) * go[i];
        den += gu[i] + go[i];
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}
