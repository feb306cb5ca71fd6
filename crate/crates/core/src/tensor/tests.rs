use super::*;
use crate::gradcheck::{check, project};

fn vec_node(g: &mut Graph, v: &[f64]) -> NodeId {
    g.param(Tensor::vector(v.to_vec()))
}

fn lcg(seed: u64) -> impl FnMut() -> f64 {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    move || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }
}

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut r = lcg(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r()).collect()).unwrap()
}

#[test]
fn relu_example() {
    let mut g = Graph::new();
    let x = vec_node(&mut g, &[-1.0, 0.0, 2.0]);
    let y = g.relu(x);
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn bce_at_half_is_ln2() {
    let mut g = Graph::new();
    let p = vec_node(&mut g, &[0.5]);
    let l = g.bce(p, &Tensor::vector(vec![0.5])).unwrap();
    assert!((g.value(l).item() - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn bce_is_finite_at_extremes() {
    for p in [0.0, 1.0] {
        for y in [0.0, 1.0] {
            let mut g = Graph::new();
            let pn = vec_node(&mut g, &[p]);
            let l = g.bce(pn, &Tensor::vector(vec![y])).unwrap();
            let s = g.sum(l);
            let grads = g.backward(s).unwrap();
            assert!(g.value(s).item().is_finite());
            assert!(grads.get(pn).unwrap().is_finite());
        }
    }
}

#[test]
fn reduce_max_over_time() {
    let mut g = Graph::new();
    let x = g.param(Tensor::new(vec![3, 1], vec![0.1, 0.9, 0.4]).unwrap());
    let m = g.reduce_max(x).unwrap();
    assert_eq!(g.value(m).data(), &[0.9]);
    let s = g.sum(m);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0, 0.0]);
}

#[test]
fn reduce_ties_go_to_first_index() {
    let mut g = Graph::new();
    let x = vec_node(&mut g, &[0.2, 0.7, 0.7, 0.2]);
    let mx = g.reduce_max(x).unwrap();
    let mn = g.reduce_min(x).unwrap();
    let both = g.add(mx, mn).unwrap();
    let grads = g.backward(both).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 0.0, 0.0]);
}

#[test]
fn linear_gradient_is_input() {
    let xs = [0.5, -2.0, 3.25];
    let mut g = Graph::new();
    let w = vec_node(&mut g, &[1.0, 1.0, 1.0]);
    let x = g.input(Tensor::vector(xs.to_vec()));
    let p = g.mul(w, x).unwrap();
    let l = g.sum(p);
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(w).unwrap().data(), &xs);
    assert!(grads.get(x).is_none());
}

#[test]
fn non_scalar_backward_is_rejected() {
    let mut g = Graph::new();
    let x = vec_node(&mut g, &[1.0, 2.0]);
    assert!(matches!(g.backward(x), Err(Error::Contract(_))));
}

#[test]
fn shape_errors_report_both_shapes() {
    let mut g = Graph::new();
    let a = g.param(Tensor::zeros(&[2, 3]));
    let b = g.param(Tensor::zeros(&[4, 2]));
    match g.matmul(a, b) {
        Err(Error::Shape { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![4, 2]);
        }
        other => panic!("{:?}", other.map(|_| ())),
    }
    assert!(g.add(a, b).is_err());
}

#[test]
fn conv_preserves_spatial_dims_and_matches_direct_sum() {
    let x = random(&[1, 5, 4, 2], 1);
    let w = random(&[3, 3, 2, 3], 2);
    let mut g = Graph::new();
    let xi = g.input(x.clone());
    let wi = g.input(w.clone());
    let y = g.conv2d_same(xi, wi).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 5, 4, 3]);
    let at = |t: isize, f: isize, c: usize| -> f64 {
        if t < 0 || t >= 5 || f < 0 || f >= 4 {
            0.0
        } else {
            x.data()[((t as usize) * 4 + f as usize) * 2 + c]
        }
    };
    for t in 0..5 {
        for f in 0..4 {
            for o in 0..3 {
                let mut s = 0.0;
                for dt in 0..3 {
                    for df in 0..3 {
                        for c in 0..2 {
                            s += at(t + dt - 1, f + df - 1, c)
                                * w.data()[((dt as usize * 3 + df as usize) * 2 + c) * 3 + o];
                        }
                    }
                }
                let got = g.value(y).data()[((t as usize) * 4 + f as usize) * 3 + o];
                assert!((got - s).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn max_pool_reduces_frequency() {
    let mut g = Graph::new();
    let x = g.param(random(&[2, 3, 40, 4], 3));
    let p1 = g.max_pool_freq(x, 5).unwrap();
    let p2 = g.max_pool_freq(p1, 4).unwrap();
    let p3 = g.max_pool_freq(p2, 2).unwrap();
    assert_eq!(g.value(p3).shape(), &[2, 3, 1, 4]);
}

#[test]
fn masked_batch_norm_zeroes_padding_and_ignores_it() {
    let x = random(&[2, 4, 3, 2], 4);
    let mut padded = x.clone();
    // Garbage in the padded frames of item 1 must not matter.
    for t in 2..4 {
        for k in 0..6 {
            padded.data_mut()[(4 + t) * 6 + k] = 100.0;
        }
    }
    let run = |input: &Tensor| {
        let mut g = Graph::new();
        let xi = g.param(input.clone());
        let gamma = g.param(Tensor::vector(vec![1.5, 0.5]));
        let beta = g.param(Tensor::vector(vec![0.1, -0.2]));
        let y = g.batch_norm(xi, gamma, beta, 1e-3, Some(&[4, 2])).unwrap();
        g.value(y).clone()
    };
    let a = run(&x);
    let b = run(&padded);
    assert_eq!(a, b);
    assert!(a.data()[(4 + 3) * 6..].iter().all(|&v| v == 0.0));
}

#[test]
fn gradcheck_core_ops() {
    let h = 1e-5;
    let r = check(&[random(&[3, 4], 5), random(&[4, 2], 6)], h, |g, ids| {
        let y = g.matmul(ids[0], ids[1])?;
        project(g, y)
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-6, "matmul {r:?}");

    let r = check(&[random(&[2, 3, 4, 2], 7), random(&[3, 3, 2, 3], 8)], h, |g, ids| {
        let y = g.conv2d_same(ids[0], ids[1])?;
        project(g, y)
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-6, "conv {r:?}");

    let r = check(
        &[
            random(&[2, 3, 2, 3], 9),
            Tensor::vector(vec![1.2, 0.7, -0.4]),
            Tensor::vector(vec![0.1, 0.2, 0.3]),
        ],
        h,
        |g, ids| {
            let y = g.batch_norm(ids[0], ids[1], ids[2], 1e-3, Some(&[3, 2]))?;
            project(g, y)
        },
    )
    .unwrap();
    assert!(r.max_rel_err < 1e-5, "batch_norm {r:?}");
}

#[test]
fn gradcheck_gru_both_directions() {
    for reverse in [false, true] {
        let inputs = [
            random(&[2, 5, 3], 10),
            random(&[3, 12], 11),
            random(&[4, 12], 12),
            random(&[12], 13),
        ];
        let r = check(&inputs, 1e-5, |g, ids| {
            let y = g.gru(ids[0], ids[1], ids[2], ids[3], &[5, 3], reverse)?;
            project(g, y)
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-6, "reverse={reverse} {r:?}");
    }
}

/// The same recurrence spelled out with elementary ops, one step at a time.
fn composed_gru(
    g: &mut Graph,
    x: NodeId,
    w: NodeId,
    u: NodeId,
    b: NodeId,
    hidden: usize,
    reverse: bool,
) -> Result<NodeId> {
    let steps = g.value(x).shape()[0];
    let mut h = g.input(Tensor::zeros(&[hidden]));
    let mut outs = vec![None; steps];
    let uz = g.slice_last(u, 0, hidden)?;
    let ur = g.slice_last(u, hidden, 2 * hidden)?;
    let un = g.slice_last(u, 2 * hidden, 3 * hidden)?;
    let xw = g.matmul(x, w)?;
    let xp = g.add_bias(xw, b)?;
    for s in 0..steps {
        let t = if reverse { steps - 1 - s } else { s };
        let row = g.select0(xp, t)?;
        let xz = g.slice_last(row, 0, hidden)?;
        let xr = g.slice_last(row, hidden, 2 * hidden)?;
        let xn = g.slice_last(row, 2 * hidden, 3 * hidden)?;
        let hz = g.matmul(h, uz)?;
        let hr = g.matmul(h, ur)?;
        let az = g.add(xz, hz)?;
        let ar = g.add(xr, hr)?;
        let z = g.sigmoid(az);
        let r = g.sigmoid(ar);
        let rh = g.mul(r, h)?;
        let hn = g.matmul(rh, un)?;
        let an = g.add(xn, hn)?;
        let n = g.tanh(an);
        let zh = g.mul(z, h)?;
        let neg = g.scale(z, -1.0);
        let one_minus_z = g.add_scalar(neg, 1.0);
        let zn = g.mul(one_minus_z, n)?;
        h = g.add(zh, zn)?;
        outs[t] = Some(h);
    }
    let outs: Vec<NodeId> = outs.into_iter().map(Option::unwrap).collect();
    g.stack(&outs)
}

#[test]
fn fused_gru_matches_composed_elementary_ops() {
    let hidden = 4;
    for reverse in [false, true] {
        let x = random(&[6, 3], 20);
        let w = random(&[3, 12], 21);
        let u = random(&[4, 12], 22);
        let b = random(&[12], 23);

        let mut g1 = Graph::new();
        let ids1: Vec<NodeId> = [&x, &w, &u, &b].iter().map(|t| g1.param((*t).clone())).collect();
        let x3 = g1.reshape(ids1[0], &[1, 6, 3]).unwrap();
        let y1 = g1.gru(x3, ids1[1], ids1[2], ids1[3], &[6], reverse).unwrap();
        let y1 = g1.reshape(y1, &[6, hidden]).unwrap();
        let l1 = project(&mut g1, y1).unwrap();
        let gr1 = g1.backward(l1).unwrap();

        let mut g2 = Graph::new();
        let ids2: Vec<NodeId> = [&x, &w, &u, &b].iter().map(|t| g2.param((*t).clone())).collect();
        let y2 = composed_gru(&mut g2, ids2[0], ids2[1], ids2[2], ids2[3], hidden, reverse).unwrap();
        let l2 = project(&mut g2, y2).unwrap();
        let gr2 = g2.backward(l2).unwrap();

        for (a, b) in g1.value(y1).data().iter().zip(g2.value(y2).data()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (i1, i2) in ids1.iter().zip(&ids2) {
            let (a, b) = (gr1.get(*i1).unwrap(), gr2.get(*i2).unwrap());
            for (p, q) in a.data().iter().zip(b.data()) {
                assert!((p - q).abs() < 1e-12, "{p} vs {q}");
            }
        }
    }
}

#[test]
fn gru_padding_matches_unpadded_run() {
    let w = random(&[2, 9], 30);
    let u = random(&[3, 9], 31);
    let b = random(&[9], 32);
    let short = random(&[1, 4, 2], 33);
    let mut long = Tensor::zeros(&[1, 7, 2]);
    long.data_mut()[..8].copy_from_slice(short.data());
    for reverse in [false, true] {
        let run = |x: &Tensor, len: usize| {
            let mut g = Graph::new();
            let ids: Vec<NodeId> = [x, &w, &u, &b].iter().map(|t| g.input((*t).clone())).collect();
            let y = g.gru(ids[0], ids[1], ids[2], ids[3], &[len], reverse).unwrap();
            g.value(y).data().to_vec()
        };
        let a = run(&short, 4);
        let b2 = run(&long, 4);
        assert_eq!(a[..], b2[..12]);
        assert!(b2[12..].iter().all(|&v| v == 0.0));
    }
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let mut g = Graph::new();
        let x = g.param(random(&[2, 6, 4, 1], 40));
        let w = g.param(random(&[3, 3, 1, 2], 41));
        let y = g.conv2d_same(x, w).unwrap();
        let p = g.max_pool_freq(y, 2).unwrap();
        let l = project(&mut g, p).unwrap();
        let grads = g.backward(l).unwrap();
        (g.value(l).item(), grads.get(w).unwrap().clone())
    };
    let (a, ga) = run();
    let (b, gb) = run();
    assert_eq!(a.to_bits(), b.to_bits());
    assert_eq!(ga, gb);
}
