use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgdcn_core::raster_io::RasterGrid;
use sgdcn_core::superpixel::{boundary_map, segment, LabelMap, SuperpixelParams, INVALID_LABEL};

fn random_tile(seed: u64, size: usize, with_land: bool) -> RasterGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..size * size).map(|_| rng.random_range(0.0..1.0)).collect();
    let mut grid = RasterGrid::new(size, size, values).unwrap();
    if with_land {
        // a land block in one corner
        let cut = rng.random_range(size / 8..size / 3);
        let valid = (0..size * size).map(|p| !(p / size < cut && p % size < cut)).collect();
        grid.set_mask(valid).unwrap();
    }
    grid
}

/// Flood fill from the first pixel of each label must reach its whole area.
fn flood_connected(map: &LabelMap) -> bool {
    let (w, h) = (map.width(), map.height());
    let areas = map.region_areas();
    let mut done = vec![false; map.n_regions()];
    for start in 0..w * h {
        let l = map.labels()[start];
        if l < 0 || done[l as usize] {
            continue;
        }
        done[l as usize] = true;
        let mut seen = vec![false; w * h];
        let mut q = VecDeque::from([start]);
        seen[start] = true;
        let mut reached = 0;
        while let Some(p) = q.pop_front() {
            reached += 1;
            let (r, c) = (p / w, p % w);
            let mut nb = Vec::new();
            if r > 0 { nb.push(p - w) }
            if r + 1 < h { nb.push(p + w) }
            if c > 0 { nb.push(p - 1) }
            if c + 1 < w { nb.push(p + 1) }
            for n in nb {
                if !seen[n] && map.labels()[n] == l {
                    seen[n] = true;
                    q.push_back(n);
                }
            }
        }
        if reached != areas[l as usize] {
            return false;
        }
    }
    true
}

fn check_contract(tile: &RasterGrid, params: &SuperpixelParams) -> LabelMap {
    let map = segment(tile, params).unwrap();
    // partition of valid pixels
    let areas = map.region_areas();
    assert_eq!(areas.iter().sum::<usize>(), tile.valid_count());
    for (l, &ok) in map.labels().iter().zip(tile.valid()) {
        assert_eq!(*l == INVALID_LABEL, !ok);
    }
    assert!(map.n_regions() <= params.n_init);
    assert!(areas.iter().all(|&a| a > 0), "labels must be dense");
    assert!(flood_connected(&map));
    let mean = areas.iter().sum::<usize>() as f64 / areas.len() as f64;
    let biggest = *areas.iter().max().unwrap();
    assert!(biggest as f64 <= 3.0 * mean, "largest region {biggest} vs mean {mean}");
    map
}

#[test]
fn random_tiles_satisfy_contract() {
    for seed in 0..6 {
        let tile = random_tile(seed, 64, seed % 2 == 1);
        for n_init in [1, 7, 60, 3000] {
            let params = SuperpixelParams { n_init, seed, ..Default::default() };
            let a = check_contract(&tile, &params);
            let b = segment(&tile, &params).unwrap();
            assert_eq!(a, b, "determinism");
        }
    }
}

#[test]
fn boundary_map_matches_exhaustive_scan() {
    let tile = random_tile(99, 48, true);
    let map = segment(&tile, &SuperpixelParams { n_init: 40, ..Default::default() }).unwrap();
    let b = boundary_map(&map);
    let (w, h) = (48i64, 48i64);
    for r in 0..h {
        for c in 0..w {
            let me = map.get(r as usize, c as usize);
            let mut differs = false;
            for (dr, dc) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                let (rr, cc) = (r + dr, c + dc);
                if rr >= 0 && cc >= 0 && rr < h && cc < w && map.get(rr as usize, cc as usize) != me {
                    differs = true;
                }
            }
            assert_eq!(b.get(r as usize, c as usize), differs);
        }
    }
}
