//! Incremental Bowyer-Watson Delaunay triangulation of image features.
//!
//! Points are inserted in input order. The unbounded region outside the
//! convex hull is covered by ghost triangles that share one vertex at
//! infinity, so the output always covers the full convex hull. Orientation
//! and in-circle signs come from adaptive exact predicates.
//!
//! Co-circular configurations resolve in favour of the triangles that
//! already exist: a new point only invalidates triangles whose circumcircle
//! contains it strictly.

use std::collections::HashMap;

use nalgebra::Point2;
use robust::{incircle, orient2d, Coord};
use thiserror::Error;

/// Points closer than this (pixels) are merged before triangulation.
pub const DUPLICATE_EPSILON: f64 = 1e-6;

const GHOST: usize = usize::MAX;
const NONE: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DelaunayError {
    #[error("need at least 3 distinct points, got {0}")]
    TooFewPoints(usize),
    #[error("all points are collinear")]
    AllCollinear,
    #[error("point {0} has a non-finite coordinate")]
    NonFinitePoint(usize),
}

/// Delaunay triangulation over a set of features.
///
/// `vertices` holds the surviving (deduplicated) points with their original
/// feature index. Triangles reference original feature indices and are
/// counter-clockwise with respect to `orient2d` on raw `(u, v)` coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Triangulation {
    pub vertices: Vec<(usize, Point2<f64>)>,
    pub triangles: Vec<[usize; 3]>,
}

impl Triangulation {
    /// Number of distinct undirected edges.
    pub fn edge_count(&self) -> usize {
        let mut edges: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|t| {
                (0..3).map(move |i| {
                    let (a, b) = (t[i], t[(i + 1) % 3]);
                    (a.min(b), a.max(b))
                })
            })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges.len()
    }

    /// Edges used by exactly one triangle.
    pub fn boundary_edges(&self) -> Vec<(usize, usize)> {
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &self.triangles {
            for i in 0..3 {
                let (a, b) = (t[i], t[(i + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let mut out: Vec<_> = count
            .into_iter()
            .filter_map(|(e, c)| (c == 1).then_some(e))
            .collect();
        out.sort_unstable();
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct Tri {
    v: [usize; 3],
    // n[i] is the neighbour across the edge opposite v[i].
    n: [usize; 3],
}

impl Tri {
    fn ghost_edge(&self) -> Option<(usize, usize)> {
        let k = self.v.iter().position(|&v| v == GHOST)?;
        Some((self.v[(k + 1) % 3], self.v[(k + 2) % 3]))
    }

    fn edge(&self, i: usize) -> (usize, usize) {
        (self.v[(i + 1) % 3], self.v[(i + 2) % 3])
    }
}

struct Mesh<'a> {
    pts: &'a [Point2<f64>],
    tris: Vec<Tri>,
    alive: Vec<bool>,
    free: Vec<usize>,
    stamp: Vec<u32>,
    epoch: u32,
    last: usize,
}

fn coord(p: &Point2<f64>) -> Coord<f64> {
    Coord { x: p.x, y: p.y }
}

impl<'a> Mesh<'a> {
    fn orient(&self, a: usize, b: usize, c: usize) -> f64 {
        orient2d(
            coord(&self.pts[a]),
            coord(&self.pts[b]),
            coord(&self.pts[c]),
        )
    }

    fn strictly_between(&self, a: usize, b: usize, p: usize) -> bool {
        // Only called for collinear a, b, p.
        let (pa, pb, pp) = (&self.pts[a], &self.pts[b], &self.pts[p]);
        if pa.x != pb.x {
            (pa.x < pp.x && pp.x < pb.x) || (pb.x < pp.x && pp.x < pa.x)
        } else {
            (pa.y < pp.y && pp.y < pb.y) || (pb.y < pp.y && pp.y < pa.y)
        }
    }

    fn in_conflict(&self, t: usize, p: usize) -> bool {
        let tri = &self.tris[t];
        match tri.ghost_edge() {
            Some((a, b)) => {
                let o = self.orient(a, b, p);
                o > 0.0 || (o == 0.0 && self.strictly_between(a, b, p))
            }
            None => {
                let [a, b, c] = tri.v;
                incircle(
                    coord(&self.pts[a]),
                    coord(&self.pts[b]),
                    coord(&self.pts[c]),
                    coord(&self.pts[p]),
                ) > 0.0
            }
        }
    }

    fn alloc(&mut self, tri: Tri) -> usize {
        if let Some(i) = self.free.pop() {
            self.tris[i] = tri;
            self.alive[i] = true;
            i
        } else {
            self.tris.push(tri);
            self.alive.push(true);
            self.stamp.push(0);
            self.tris.len() - 1
        }
    }

    fn set_neighbor(&mut self, t: usize, a: usize, b: usize, nb: usize) {
        let tri = &mut self.tris[t];
        for i in 0..3 {
            if tri.v[(i + 1) % 3] == a && tri.v[(i + 2) % 3] == b {
                tri.n[i] = nb;
                return;
            }
        }
        unreachable!("edge ({a}, {b}) not found in triangle {t}");
    }

    /// Finds a triangle in conflict with `p` by walking from the last
    /// created real triangle.
    fn locate(&self, p: usize) -> usize {
        let mut t = self.last;
        if self.tris[t].ghost_edge().is_some() {
            let k = self.tris[t].v.iter().position(|&v| v == GHOST).unwrap();
            t = self.tris[t].n[k];
        }
        let limit = 4 * self.tris.len() + 16;
        let mut steps = 0;
        let mut offset = 0;
        'walk: while steps < limit {
            steps += 1;
            if self.tris[t].ghost_edge().is_some() {
                return t;
            }
            for j in 0..3 {
                let i = (j + offset) % 3;
                let (a, b) = self.tris[t].edge(i);
                if self.orient(a, b, p) < 0.0 {
                    t = self.tris[t].n[i];
                    offset = (offset + 1) % 3;
                    continue 'walk;
                }
            }
            return t;
        }
        // Walks terminate on Delaunay meshes; keep a brute-force fallback.
        (0..self.tris.len())
            .find(|&t| self.alive[t] && self.in_conflict(t, p))
            .expect("every point conflicts with some triangle")
    }

    fn insert(&mut self, p: usize) {
        let start = self.locate(p);
        self.epoch += 1;
        let epoch = self.epoch;

        let mut cavity = vec![start];
        self.stamp[start] = epoch;
        let mut stack = vec![start];
        while let Some(t) = stack.pop() {
            for i in 0..3 {
                let nb = self.tris[t].n[i];
                if self.stamp[nb] != epoch && self.in_conflict(nb, p) {
                    self.stamp[nb] = epoch;
                    cavity.push(nb);
                    stack.push(nb);
                }
            }
        }

        // Boundary edges in the orientation of the cavity triangle.
        let mut boundary = Vec::with_capacity(cavity.len() + 2);
        for &t in &cavity {
            for i in 0..3 {
                let nb = self.tris[t].n[i];
                if self.stamp[nb] != epoch {
                    let (a, b) = self.tris[t].edge(i);
                    boundary.push((a, b, nb));
                }
            }
        }

        for &t in &cavity {
            self.alive[t] = false;
            self.free.push(t);
        }

        let mut created = Vec::with_capacity(boundary.len());
        for &(a, b, outer) in &boundary {
            let t = self.alloc(Tri {
                v: [a, b, p],
                n: [NONE, NONE, outer],
            });
            self.set_neighbor(outer, b, a, t);
            created.push(t);
        }
        // New triangle (a, b, p) meets (b, x, p) across (b, p) and
        // (y, a, p) across (p, a).
        for (k, &(a, b, _)) in boundary.iter().enumerate() {
            let t = created[k];
            let next = boundary.iter().position(|e| e.0 == b).map(|j| created[j]);
            let prev = boundary.iter().position(|e| e.1 == a).map(|j| created[j]);
            let (next, prev) = (next.expect("closed cavity"), prev.expect("closed cavity"));
            self.tris[t].n[0] = next;
            self.tris[t].n[1] = prev;
        }
        if let Some(&t) = created
            .iter()
            .rev()
            .find(|&&t| self.tris[t].ghost_edge().is_none())
        {
            self.last = t;
        }
    }
}

/// Merges points closer than [`DUPLICATE_EPSILON`], keeping the lowest index.
fn dedup(points: &[Point2<f64>]) -> Vec<usize> {
    let cell = |v: f64| (v / DUPLICATE_EPSILON).floor() as i64;
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::with_capacity(points.len());
    let mut kept = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let (cx, cy) = (cell(p.x), cell(p.y));
        let duplicate = (-1..=1).any(|dx| {
            (-1..=1).any(|dy| {
                grid.get(&(cx + dx, cy + dy)).is_some_and(|bucket| {
                    bucket
                        .iter()
                        .any(|&j| (points[j] - p).norm() < DUPLICATE_EPSILON)
                })
            })
        });
        if !duplicate {
            grid.entry((cx, cy)).or_default().push(i);
            kept.push(i);
        }
    }
    kept
}

/// Indices sorted along a Hilbert curve over the bounding box, so each
/// point location walk starts next to its target.
fn hilbert_order(pts: &[Point2<f64>]) -> Vec<usize> {
    const SIDE: u32 = 1 << 16;
    let (mut lo, mut hi) = (pts[0], pts[0]);
    for p in pts {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let span = (hi - lo).amax().max(f64::MIN_POSITIVE);
    let cell = |v: f64, base: f64| (((v - base) / span * (SIDE - 1) as f64) as u32).min(SIDE - 1);
    let mut keyed: Vec<(u64, usize)> = pts
        .iter()
        .enumerate()
        .map(|(i, p)| (hilbert_index(SIDE, cell(p.x, lo.x), cell(p.y, lo.y)), i))
        .collect();
    keyed.sort_unstable();
    keyed.into_iter().map(|(_, i)| i).collect()
}

fn hilbert_index(side: u32, mut x: u32, mut y: u32) -> u64 {
    let mut d = 0u64;
    let mut s = side / 2;
    while s > 0 {
        let rx = u32::from(x & s > 0);
        let ry = u32::from(y & s > 0);
        d += u64::from(s) * u64::from(s) * u64::from((3 * rx) ^ ry);
        if ry == 0 {
            if rx == 1 {
                x = side - 1 - x;
                y = side - 1 - y;
            }
            std::mem::swap(&mut x, &mut y);
        }
        s /= 2;
    }
    d
}

/// Delaunay triangulation of `points`.
pub fn triangulate(points: &[Point2<f64>]) -> Result<Triangulation, DelaunayError> {
    if let Some(i) = points
        .iter()
        .position(|p| !p.x.is_finite() || !p.y.is_finite())
    {
        return Err(DelaunayError::NonFinitePoint(i));
    }
    let kept = dedup(points);
    if kept.len() < 3 {
        return Err(DelaunayError::TooFewPoints(kept.len()));
    }
    let pts: Vec<Point2<f64>> = kept.iter().map(|&i| points[i]).collect();

    let mut mesh = Mesh {
        pts: &pts,
        tris: Vec::with_capacity(2 * pts.len() + 8),
        alive: Vec::new(),
        free: Vec::new(),
        stamp: Vec::new(),
        epoch: 0,
        last: 0,
    };

    let (a, b) = (0, 1);
    let c = (2..pts.len())
        .find(|&k| mesh.orient(a, b, k) != 0.0)
        .ok_or(DelaunayError::AllCollinear)?;
    let (b, c) = if mesh.orient(a, b, c) > 0.0 {
        (b, c)
    } else {
        (c, b)
    };

    // Real triangle 0 and ghosts across each of its edges.
    let t0 = mesh.alloc(Tri {
        v: [a, b, c],
        n: [NONE; 3],
    });
    let g_ab = mesh.alloc(Tri {
        v: [b, a, GHOST],
        n: [NONE; 3],
    });
    let g_bc = mesh.alloc(Tri {
        v: [c, b, GHOST],
        n: [NONE; 3],
    });
    let g_ca = mesh.alloc(Tri {
        v: [a, c, GHOST],
        n: [NONE; 3],
    });
    mesh.tris[t0].n = [g_bc, g_ca, g_ab];
    // Ghost (u, v, G): n[2] across (u, v); n[0] across (v, G); n[1] across (G, u).
    mesh.tris[g_ab].n = [g_ca, g_bc, t0];
    mesh.tris[g_bc].n = [g_ab, g_ca, t0];
    mesh.tris[g_ca].n = [g_bc, g_ab, t0];
    mesh.last = t0;

    for p in hilbert_order(&pts) {
        if p != a && p != b && p != c {
            mesh.insert(p);
        }
    }

    let triangles = mesh
        .tris
        .iter()
        .zip(&mesh.alive)
        .filter(|(t, &alive)| alive && t.ghost_edge().is_none())
        .map(|(t, _)| t.v.map(|i| kept[i]))
        .collect();
    let vertices = kept.iter().map(|&i| (i, points[i])).collect();
    Ok(Triangulation {
        vertices,
        triangles,
    })
}
