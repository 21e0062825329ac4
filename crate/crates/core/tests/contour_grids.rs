use prefopt::contour::{self, evaluate_grid, grid_argmin, render_svg, GridSettings};
use prefopt::losses::{self, LossKind, LossSpec, PairPoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const REF: (f64, f64) = (0.4, 0.1);

fn coarse() -> GridSettings {
    GridSettings { resolution: (60, 60), ..GridSettings::figure1() }
}

#[test]
fn random_cells_match_pointwise_evaluation_bit_for_bit() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for kind in LossKind::ALL {
        let spec = LossSpec::new(kind);
        let grid = evaluate_grid(&spec, REF, &coarse()).unwrap();
        for _ in 0..200 {
            let row = rng.random_range(0..grid.rows());
            let col = rng.random_range(0..grid.cols());
            let point = PairPoint::new(grid.pw_axis[col], grid.pl_axis[row], REF.0, REF.1).unwrap();
            let fresh = losses::loss(&point, &spec).unwrap();
            assert_eq!(grid.value(row, col).unwrap().to_bits(), fresh.to_bits());
        }
    }
}

#[test]
fn bdpo_is_doubly_monotone() {
    let grid = evaluate_grid(&LossSpec::bdpo(0.1, 0.5), REF, &GridSettings { pl_range: (0.0, 0.5), ..coarse() }).unwrap();
    for row in 0..grid.rows() {
        for col in 1..grid.cols() {
            assert!(grid.value(row, col).unwrap() < grid.value(row, col - 1).unwrap());
        }
    }
    for col in 0..grid.cols() {
        for row in 1..grid.rows() {
            assert!(grid.value(row, col).unwrap() > grid.value(row - 1, col).unwrap());
        }
    }
    assert!(grid.values.iter().all(|v| v.unwrap().is_finite()));
}

#[test]
fn dpop_equals_dpo_where_chosen_is_above_reference() {
    let dpo = evaluate_grid(&LossSpec::dpo(0.1), REF, &coarse()).unwrap();
    let dpop = evaluate_grid(&LossSpec::dpop(0.1, 5.0), REF, &coarse()).unwrap();
    let mut checked = 0;
    for row in 0..dpo.rows() {
        for col in 0..dpo.cols() {
            if dpo.pw_axis[col] >= REF.0 {
                assert_eq!(dpo.value(row, col), dpop.value(row, col));
                checked += 1;
            } else {
                assert!(dpop.value(row, col).unwrap() > dpo.value(row, col).unwrap());
            }
        }
    }
    assert!(checked > 0);
}

#[test]
fn dpo_family_refuses_zero_rejected() {
    let settings = GridSettings { pl_range: (0.0, 0.5), ..coarse() };
    for kind in [LossKind::Dpo, LossKind::Dpop, LossKind::DpoNll] {
        let err = evaluate_grid(&LossSpec::new(kind), REF, &settings).unwrap_err();
        assert!(err.to_string().contains("p_l = 0"), "{err}");
    }
}

#[test]
fn dpo_argmin_sits_on_the_lowest_row_at_max_pw() {
    let grid = evaluate_grid(&LossSpec::dpo(0.1), REF, &coarse()).unwrap();
    let best = grid_argmin(&grid).unwrap();
    let mut scan = (f64::INFINITY, 0, 0);
    for row in 0..grid.rows() {
        for col in 0..grid.cols() {
            let v = grid.value(row, col).unwrap();
            if v < scan.0 || (v == scan.0 && col > scan.2) {
                scan = (v, row, col);
            }
        }
    }
    assert_eq!((best.row, best.col), (scan.1, scan.2));
    assert_eq!(best.row, 0);
    assert_eq!(best.col, grid.cols() - 1);
}

#[test]
fn saved_grid_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let grid = evaluate_grid(&LossSpec::bdpo(0.1, 0.5), REF, &GridSettings { resolution: (8, 6), ..coarse() }).unwrap();
    let paths = grid.save(dir.path(), "bdpo").unwrap();
    assert_eq!(paths.len(), 2);
    let csv = std::fs::read_to_string(&paths[0]).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("pw,pl,loss"));
    let parsed: Vec<(f64, f64, f64)> = lines
        .map(|l| {
            let f: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            (f[0], f[1], f[2])
        })
        .collect();
    assert_eq!(parsed.len(), grid.rows() * grid.cols());
    for ((pw, pl, loss), (gpw, gpl, gv)) in parsed.iter().zip(grid.cells()) {
        assert_eq!((pw.to_bits(), pl.to_bits(), loss.to_bits()), (gpw.to_bits(), gpl.to_bits(), gv.unwrap().to_bits()));
    }
    let sidecar: contour::GridSidecar = serde_json::from_str(&std::fs::read_to_string(&paths[1]).unwrap()).unwrap();
    assert_eq!(sidecar.pw_axis, grid.pw_axis);
    assert_eq!(sidecar.pl_axis, grid.pl_axis);
}

#[test]
fn svg_marks_masked_cells() {
    let settings = GridSettings { mask_simplex: true, pl_range: (0.005, 0.9), ..coarse() };
    let grid = evaluate_grid(&LossSpec::dpo(0.1), REF, &settings).unwrap();
    assert!(grid.values.iter().any(Option::is_none));
    let svg = render_svg(&grid);
    assert!(svg.contains("#cccccc"));
}
