use std::cell::Cell;
use std::collections::hash_map::Entry;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any computation graph on this thread.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Everything a backward closure may read: the upstream gradient, the value
/// the op produced, and the op's inputs.
pub(crate) struct BackwardCtx<'a> {
    pub grad: &'a [f64],
    pub out: &'a [f64],
    pub inputs: &'a [Tensor],
}

impl BackwardCtx<'_> {
    pub fn needs(&self, i: usize) -> bool {
        self.inputs[i].requires_grad()
    }
}

pub(crate) type BackwardFn =
    Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> + Send + Sync>;

struct Node {
    op: &'static str,
    inputs: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    node: Option<Node>,
}

/// Row-major n-dimensional array of `f64` with optional graph linkage.
///
/// Cloning is cheap and shares storage. Data is immutable once created;
/// parameter updates build fresh leaf tensors.
#[derive(Clone)]
pub struct Tensor(Arc<Inner>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.0.shape);
        if let Some(node) = &self.0.node {
            s.field("op", &node.op);
        }
        if self.numel() <= 16 {
            s.field("data", &self.0.data);
        }
        s.finish()
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.contains(&0) {
        return Err(Error::Shape(format!(
            "dimensions must be positive, got {shape:?}"
        )));
    }
    let n: usize = shape.iter().product();
    if n != len {
        return Err(Error::Shape(format!(
            "shape {shape:?} holds {n} elements but data has {len}"
        )));
    }
    Ok(())
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, node: Option<Node>) -> Self {
        Tensor(Arc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            node,
        }))
    }

    /// Constant leaf (never receives a gradient).
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// Trainable leaf: backward fills its gradient.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::build(shape.to_vec(), data, true, None))
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n])
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, vec![value; n])
    }

    pub fn scalar(value: f64) -> Self {
        Self::build(vec![1], vec![value], false, None)
    }

    /// Result of a differentiable op. The node is only kept when gradients
    /// are enabled and some input needs one.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        op: &'static str,
        inputs: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len(), "{op}");
        let track = is_grad_enabled() && inputs.iter().any(Tensor::requires_grad);
        let node = track.then(|| Node {
            op,
            inputs,
            backward,
        });
        Self::build(shape, data, track, node)
    }

    /// Unique identity of this tensor value (not of its contents).
    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.0.data[0])
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    /// Name of the op that produced this tensor, if it is tracked.
    pub fn op_name(&self) -> Option<&'static str> {
        self.0.node.as_ref().map(|n| n.op)
    }

    /// Same values, no graph linkage, no gradient.
    pub fn detach(&self) -> Tensor {
        Self::build(self.0.shape.clone(), self.0.data.clone(), false, None)
    }

    /// Accumulated gradient of a trainable leaf.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    pub fn is_finite(&self) -> bool {
        self.0.data.iter().all(|v| v.is_finite())
    }

    /// Reverse-mode sweep from a single-element tensor.
    ///
    /// Each trainable leaf receives the sum of all contributions from this
    /// graph, added to its stored gradient in one step. Repeated calls
    /// therefore accumulate as `((g1) + g2) + ...` elementwise.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let order = self.topological_order();
        let mut grads: HashMap<u64, Vec<f64>> = HashMap::new();
        grads.insert(self.id(), vec![1.0]);

        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.id()) else {
                continue;
            };
            match &t.0.node {
                Some(node) => {
                    let ctx = BackwardCtx {
                        grad: &g,
                        out: &t.0.data,
                        inputs: &node.inputs,
                    };
                    let input_grads = (node.backward)(&ctx);
                    debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", node.op);
                    for (input, ig) in node.inputs.iter().zip(input_grads) {
                        let Some(ig) = ig else { continue };
                        if !input.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(ig.len(), input.numel(), "{}", node.op);
                        match grads.entry(input.id()) {
                            Entry::Occupied(mut e) => add_assign(e.get_mut(), &ig),
                            Entry::Vacant(e) => {
                                e.insert(ig);
                            }
                        }
                    }
                }
                None => {
                    let mut slot = t.0.grad.lock().expect("grad lock poisoned");
                    match slot.as_mut() {
                        Some(acc) => add_assign(acc, &g),
                        None => *slot = Some(g),
                    }
                }
            }
        }
        Ok(())
    }

    /// Trainable leaves this value depends on through the tracked graph.
    pub fn trainable_leaves(&self) -> Vec<Tensor> {
        if !self.requires_grad() {
            return Vec::new();
        }
        self.topological_order()
            .into_iter()
            .filter(Tensor::is_leaf)
            .collect()
    }

    /// Post-order over the tracked subgraph; inputs precede consumers.
    fn topological_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.id());
        while let Some((t, next)) = stack.pop() {
            let inputs = t.0.node.as_ref().map(|n| n.inputs.as_slice()).unwrap_or(&[]);
            if next < inputs.len() {
                let child = inputs[next].clone();
                stack.push((t, next + 1));
                if child.requires_grad() && visited.insert(child.id()) {
                    stack.push((child, 0));
                }
            } else {
                order.push(t);
            }
        }
        order
    }
}

pub(crate) fn add_assign(acc: &mut [f64], other: &[f64]) {
    for (a, b) in acc.iter_mut().zip(other) {
        *a += b;
    }
}

impl Drop for Inner {
    // Unlink long graphs iteratively so dropping a deep chain cannot overflow
    // the stack.
    fn drop(&mut self) {
        let Some(node) = self.node.take() else { return };
        let mut pending = node.inputs;
        while let Some(t) = pending.pop() {
            if let Ok(mut inner) = Arc::try_unwrap(t.0) {
                if let Some(n) = inner.node.take() {
                    pending.extend(n.inputs);
                }
            }
        }
    }
}
