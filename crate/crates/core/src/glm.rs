//! Lightning events as a binary rain proxy: spatial clusters of adjacent
//! pixels, spatio-temporal flash grouping, and rasterized presence masks.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{precondition, Result};
use crate::raster::{Grid, GridGeometry, EARTH_RADIUS_M};

/// Two events closer than this in time may belong to the same flash.
pub const FLASH_MAX_DT_S: f64 = 0.33;
/// Two events closer than this on the ground may belong to the same flash.
pub const FLASH_MAX_DISTANCE_KM: f64 = 16.5;
/// Largest SAR/lightning time difference kept in a proxy mask.
pub const COLOCATION_WINDOW_S: f64 = 1200.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightningEvent {
    pub time_s: f64,
    pub lat: f64,
    pub lon: f64,
}

/// Pixel adjacency used when clustering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

/// Connected set of occupied pixels and the events that fell in them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    pub members: Vec<usize>,
    pub pixels: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clustering {
    pub clusters: Vec<Cluster>,
    /// Events outside the geometry or with non-finite coordinates.
    pub rejected: usize,
}

/// Events chained by the flash pairing rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Flash {
    pub members: Vec<usize>,
    pub start_s: f64,
    pub end_s: f64,
    pub lat_range: (f64, f64),
    pub lon_range: (f64, f64),
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct DisjointSet {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSet {
    pub fn new(n: usize) -> Self {
        DisjointSet { parent: (0..n).collect(), size: alloc::vec![1; n] }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.size[a] < self.size[b] {
            core::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
    }

    /// Members of every set, each sorted, sets ordered by smallest member.
    pub fn groups(&mut self) -> Vec<Vec<usize>> {
        let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for x in 0..self.parent.len() {
            let r = self.find(x);
            by_root.entry(r).or_default().push(x);
        }
        let mut groups: Vec<Vec<usize>> = by_root.into_values().collect();
        groups.sort_by_key(|g| g[0]);
        groups
    }
}

/// Great-circle distance by the haversine formula.
pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let s = libm::sin(dp / 2.0);
    let t = libm::sin(dl / 2.0);
    let h = s * s + libm::cos(p1) * libm::cos(p2) * t * t;
    2.0 * EARTH_RADIUS_M / 1000.0 * libm::asin(libm::sqrt(h.min(1.0)))
}

/// Groups events into connected components of occupied pixels.
///
/// The result does not depend on event order: clusters are sorted by their
/// first pixel in row-major order, pixels and members ascending.
pub fn cluster_events(events: &[LightningEvent], geometry: &GridGeometry, connectivity: Connectivity) -> Clustering {
    let mut occupied: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    let mut rejected = 0;
    for (i, e) in events.iter().enumerate() {
        match geometry.locate(e.lat, e.lon) {
            Some(px) => occupied.entry(px).or_default().push(i),
            None => rejected += 1,
        }
    }
    let pixels: Vec<(usize, usize)> = occupied.keys().copied().collect();
    let index: BTreeMap<(usize, usize), usize> = pixels.iter().enumerate().map(|(k, &p)| (p, k)).collect();
    let mut sets = DisjointSet::new(pixels.len());
    let offsets: &[(isize, isize)] = match connectivity {
        Connectivity::Four => &[(0, 1), (1, 0)],
        Connectivity::Eight => &[(0, 1), (1, -1), (1, 0), (1, 1)],
    };
    for (k, &(r, c)) in pixels.iter().enumerate() {
        for &(dr, dc) in offsets {
            let (nr, nc) = (r as isize + dr, c as isize + dc);
            if nr < 0 || nc < 0 {
                continue;
            }
            if let Some(&m) = index.get(&(nr as usize, nc as usize)) {
                sets.union(k, m);
            }
        }
    }
    let clusters = sets
        .groups()
        .into_iter()
        .map(|group| {
            let px: Vec<(usize, usize)> = group.iter().map(|&k| pixels[k]).collect();
            let mut members: Vec<usize> = px.iter().flat_map(|p| occupied[p].iter().copied()).collect();
            members.sort_unstable();
            Cluster { members, pixels: px }
        })
        .collect();
    Clustering { clusters, rejected }
}

fn flash_pair(a: &LightningEvent, b: &LightningEvent) -> bool {
    (b.time_s - a.time_s).abs() < FLASH_MAX_DT_S
        && haversine_km(a.lat, a.lon, b.lat, b.lon) < FLASH_MAX_DISTANCE_KM
}

/// Transitive closure of the flash pairing rule (less than 330 ms and less
/// than 16.5 km apart) over time-sorted events.
pub fn group_flashes(events: &[LightningEvent]) -> Result<Vec<Flash>> {
    if let Some(k) = events.windows(2).position(|w| !(w[0].time_s <= w[1].time_s)) {
        return Err(precondition!("events must be sorted by time (index {})", k + 1));
    }
    let mut sets = DisjointSet::new(events.len());
    for i in 0..events.len() {
        for j in i + 1..events.len() {
            if events[j].time_s - events[i].time_s >= FLASH_MAX_DT_S {
                break;
            }
            if flash_pair(&events[i], &events[j]) {
                sets.union(i, j);
            }
        }
    }
    Ok(sets
        .groups()
        .into_iter()
        .map(|members| {
            let fold = |f: fn(&LightningEvent) -> f64| {
                members.iter().map(|&m| f(&events[m])).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
            };
            let (start_s, end_s) = fold(|e| e.time_s);
            Flash { lat_range: fold(|e| e.lat), lon_range: fold(|e| e.lon), start_s, end_s, members }
        })
        .collect())
}

/// Marks every pixel of the given clusters.
pub fn rasterize_clusters(clusters: &[Cluster], geometry: &GridGeometry) -> Result<Grid> {
    let mut bytes = alloc::vec![0u8; geometry.len()];
    for c in clusters {
        for &(r, col) in &c.pixels {
            bytes[r * geometry.cols + col] = 1;
        }
    }
    Grid::mask(*geometry, &bytes)
}

/// Binary lightning mask for one acquisition: events within `max_dt_s` of
/// `acquisition_time_s` are clustered and their pixels set.
pub fn rasterize_lightning(
    events: &[LightningEvent],
    geometry: &GridGeometry,
    acquisition_time_s: f64,
    max_dt_s: f64,
    connectivity: Connectivity,
) -> Result<(Grid, Clustering)> {
    let in_window: Vec<LightningEvent> = events
        .iter()
        .filter(|e| (e.time_s - acquisition_time_s).abs() <= max_dt_s)
        .copied()
        .collect();
    let clustering = cluster_events(&in_window, geometry, connectivity);
    let mask = rasterize_clusters(&clustering.clusters, geometry)?.with_timestamp(acquisition_time_s as i64);
    Ok((mask, clustering))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::METERS_PER_DEGREE;
    use alloc::vec;

    fn geo() -> GridGeometry {
        GridGeometry::with_origin(50, 50, 10_000.0, 30.0, -80.0).unwrap()
    }

    fn at(g: &GridGeometry, r: f64, c: f64, t: f64) -> LightningEvent {
        let (lat, lon) = g.pixel_to_latlon(r + 0.5, c + 0.5);
        LightningEvent { time_s: t, lat, lon }
    }

    #[test]
    fn haversine_reference() {
        let d = haversine_km(0.0, 0.0, 1.0, 0.0);
        assert!((d - METERS_PER_DEGREE / 1000.0).abs() < 1e-9);
        assert!((haversine_km(10.0, 20.0, 10.0, 20.0)).abs() < 1e-12);
    }

    #[test]
    fn clustering_cases() {
        let g = geo();
        let one = cluster_events(&[at(&g, 3.0, 3.0, 0.0)], &g, Connectivity::Eight);
        assert_eq!(one.clusters.len(), 1);
        assert_eq!(one.clusters[0].pixels, vec![(3, 3)]);
        let diag = [at(&g, 3.0, 3.0, 0.0), at(&g, 4.0, 4.0, 0.0)];
        assert_eq!(cluster_events(&diag, &g, Connectivity::Eight).clusters.len(), 1);
        assert_eq!(cluster_events(&diag, &g, Connectivity::Four).clusters.len(), 2);
        let far = [at(&g, 3.0, 3.0, 0.0), at(&g, 3.0, 13.0, 0.0)];
        assert_eq!(cluster_events(&far, &g, Connectivity::Eight).clusters.len(), 2);
        let outside = [LightningEvent { time_s: 0.0, lat: 50.0, lon: 0.0 }];
        assert_eq!(cluster_events(&outside, &g, Connectivity::Eight).rejected, 1);
    }

    #[test]
    fn clustering_is_order_free() {
        let g = geo();
        let evs: Vec<LightningEvent> = (0..40)
            .map(|k| at(&g, ((k * 7) % 13) as f64, ((k * 11) % 17) as f64, k as f64))
            .collect();
        let a = cluster_events(&evs, &g, Connectivity::Eight);
        let mut rev = evs.clone();
        rev.reverse();
        let b = cluster_events(&rev, &g, Connectivity::Eight);
        let n = evs.len() - 1;
        let remap: Vec<Vec<(usize, usize)>> = b.clusters.iter().map(|c| c.pixels.clone()).collect();
        assert_eq!(a.clusters.iter().map(|c| c.pixels.clone()).collect::<Vec<_>>(), remap);
        for (ca, cb) in a.clusters.iter().zip(&b.clusters) {
            let mut mapped: Vec<usize> = cb.members.iter().map(|m| n - m).collect();
            mapped.sort_unstable();
            assert_eq!(ca.members, mapped);
        }
    }

    fn offset_km(base: &LightningEvent, north_km: f64, t: f64) -> LightningEvent {
        LightningEvent { time_s: t, lat: base.lat + north_km * 1000.0 / METERS_PER_DEGREE, lon: base.lon }
    }

    #[test]
    fn flash_thresholds() {
        let a = LightningEvent { time_s: 100.0, lat: 25.0, lon: -70.0 };
        let f = group_flashes(&[a, offset_km(&a, 10.0, 100.30)]).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].members, vec![0, 1]);
        assert_eq!(group_flashes(&[a, offset_km(&a, 10.0, 100.40)]).unwrap().len(), 2);
        assert_eq!(group_flashes(&[a, offset_km(&a, 17.0, 100.1)]).unwrap().len(), 2);
        assert_eq!(group_flashes(&[a]).unwrap().len(), 1);
        let b = LightningEvent { time_s: 0.0, ..a };
        assert_eq!(group_flashes(&[b, LightningEvent { time_s: 0.33, ..a }]).unwrap().len(), 2);
        assert!(group_flashes(&[offset_km(&a, 1.0, 101.0), a]).is_err());
    }

    #[test]
    fn chained_flash() {
        let a = LightningEvent { time_s: 0.0, lat: 25.0, lon: -70.0 };
        let evs = [a, offset_km(&a, 12.0, 0.2), offset_km(&a, 24.0, 0.4)];
        let f = group_flashes(&evs).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!((f[0].start_s, f[0].end_s), (0.0, 0.4));
    }

    #[test]
    fn raster_window() {
        let g = geo();
        let (m, _) = rasterize_lightning(&[], &g, 0.0, COLOCATION_WINDOW_S, Connectivity::Eight).unwrap();
        assert!(m.values().iter().all(|&v| v == 0.0));
        let evs = [at(&g, 2.0, 3.0, 10.0), at(&g, 2.0, 4.0, 15.0), at(&g, 30.0, 30.0, 21.0 * 60.0)];
        let (m, cl) = rasterize_lightning(&evs, &g, 0.0, COLOCATION_WINDOW_S, Connectivity::Eight).unwrap();
        assert_eq!(cl.clusters.len(), 1);
        let set: Vec<(usize, usize)> = (0..50).flat_map(|r| (0..50).map(move |c| (r, c))).filter(|&(r, c)| m.is_set(r, c)).collect();
        assert_eq!(set, vec![(2, 3), (2, 4)]);
    }
}
