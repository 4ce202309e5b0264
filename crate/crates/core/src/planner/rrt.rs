//! RRT-Connect between two configurations and random shortcutting.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::MeanSceneChecker;
use crate::error::{Error, Result};
use crate::geom::JointVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RrtConfig {
    /// Largest Euclidean joint-space extension (radians).
    pub step: f64,
    /// Probability of sampling the other tree's root.
    pub goal_bias: f64,
    pub max_iterations: usize,
    pub shortcut_rounds: usize,
}

impl Default for RrtConfig {
    fn default() -> Self {
        Self { step: 0.3, goal_bias: 0.05, max_iterations: 5000, shortcut_rounds: 100 }
    }
}

impl RrtConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !(0.0..=1.0).contains(&self.goal_bias) || self.max_iterations == 0 {
            return Err(Error::Argument("RRT step must be positive, goal bias in [0, 1], iterations >= 1".into()));
        }
        Ok(())
    }
}

struct Tree {
    nodes: Vec<JointVector>,
    parent: Vec<usize>,
}

impl Tree {
    fn new(root: JointVector) -> Self {
        Self { nodes: vec![root], parent: vec![0] }
    }

    fn nearest(&self, q: &JointVector) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, n) in self.nodes.iter().enumerate() {
            let d = n.dist2(q);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    fn push(&mut self, q: JointVector, parent: usize) -> usize {
        self.nodes.push(q);
        self.parent.push(parent);
        self.nodes.len() - 1
    }

    /// Root-to-node configurations.
    fn branch(&self, mut i: usize) -> Vec<JointVector> {
        let mut out = vec![self.nodes[i].clone()];
        while i != 0 {
            i = self.parent[i];
            out.push(self.nodes[i].clone());
        }
        out.reverse();
        out
    }
}

enum Extend {
    Trapped,
    Advanced(usize),
    Reached(usize),
}

fn extend(tree: &mut Tree, target: &JointVector, step: f64, checker: &MeanSceneChecker<'_>) -> Result<Extend> {
    let near = tree.nearest(target);
    let from = &tree.nodes[near];
    let d = from.dist2(target);
    let (q, reached) = if d <= step { (target.clone(), true) } else { (from.lerp(target, step / d), false) };
    if !checker.edge_free(from, &q)? {
        return Ok(Extend::Trapped);
    }
    let i = tree.push(q, near);
    Ok(if reached { Extend::Reached(i) } else { Extend::Advanced(i) })
}

fn connect(tree: &mut Tree, target: &JointVector, step: f64, checker: &MeanSceneChecker<'_>) -> Result<Option<usize>> {
    loop {
        match extend(tree, target, step, checker)? {
            Extend::Trapped => return Ok(None),
            Extend::Reached(i) => return Ok(Some(i)),
            Extend::Advanced(_) => {}
        }
    }
}

/// Bidirectional RRT-Connect from `start` to `goal`. `None` when the
/// iteration budget runs out.
pub fn rrt_connect(
    checker: &MeanSceneChecker<'_>,
    start: &JointVector,
    goal: &JointVector,
    config: &RrtConfig,
    rng: &mut impl Rng,
) -> Result<Option<Vec<JointVector>>> {
    config.validate()?;
    if !checker.config_free(start)? || !checker.config_free(goal)? {
        return Ok(None);
    }
    if checker.edge_free(start, goal)? {
        return Ok(Some(vec![start.clone(), goal.clone()]));
    }
    let chain = checker.chain();
    let mut a = Tree::new(start.clone());
    let mut b = Tree::new(goal.clone());
    let mut a_is_start = true;
    for _ in 0..config.max_iterations {
        let sample = if rng.random::<f64>() < config.goal_bias {
            b.nodes[0].clone()
        } else {
            chain.random_configuration(rng)
        };
        let new = match extend(&mut a, &sample, config.step, checker)? {
            Extend::Trapped => None,
            Extend::Advanced(i) | Extend::Reached(i) => Some(i),
        };
        if let Some(i) = new {
            let q = a.nodes[i].clone();
            if let Some(j) = connect(&mut b, &q, config.step, checker)? {
                let mut head = a.branch(i);
                let mut tail = b.branch(j);
                tail.pop();
                tail.reverse();
                head.extend(tail);
                if !a_is_start {
                    head.reverse();
                }
                return Ok(Some(head));
            }
        }
        std::mem::swap(&mut a, &mut b);
        a_is_start = !a_is_start;
    }
    Ok(None)
}

/// Replace random sub-paths by straight edges when they are collision-free.
pub fn shortcut(
    checker: &MeanSceneChecker<'_>,
    mut path: Vec<JointVector>,
    rounds: usize,
    rng: &mut impl Rng,
) -> Result<Vec<JointVector>> {
    for _ in 0..rounds {
        if path.len() <= 2 {
            break;
        }
        let i = rng.random_range(0..path.len() - 2);
        let j = rng.random_range(i + 2..path.len());
        if checker.edge_free(&path[i], &path[j])? {
            path.drain(i + 1..j);
        }
    }
    Ok(path)
}
