//! A small reverse-mode automatic differentiation engine over dense `f64`
//! tensors.
//!
//! Every backward rule is itself written with differentiable tensor ops, so
//! gradients can be differentiated again. Passing `create_graph = true` to
//! [`grad`] records the backward pass; this is what the gradient penalty
//! needs. Without it the backward pass runs with recording disabled.

mod conv;
mod ops;

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

pub use conv::ConvGeometry;

type BackwardFn = dyn Fn(&Tensor, &[Tensor], &Tensor) -> Vec<Option<Tensor>> + Send + Sync;

struct GradFn {
    inputs: Vec<Tensor>,
    // (grad_output, inputs, output) -> one optional gradient per input
    backward: Box<BackwardFn>,
}

struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    requires_grad: bool,
    grad_fn: Option<GradFn>,
}

/// Immutable, reference-counted tensor value plus its position in the
/// recorded computation graph.
#[derive(Clone)]
pub struct Tensor(Arc<Node>);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Whether ops on this thread currently record their inputs.
pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Runs `f` with graph recording disabled on this thread.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    with_grad_mode(false, f)
}

fn with_grad_mode<T>(enabled: bool, f: impl FnOnce() -> T) -> T {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let prev = GRAD_ENABLED.with(|g| g.replace(enabled));
    let _restore = Restore(prev);
    f()
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    /// A constant tensor (never receives gradients).
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Tensor {
        assert_eq!(
            data.len(),
            numel(shape),
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor(Arc::new(Node {
            data,
            shape: shape.to_vec(),
            requires_grad: false,
            grad_fn: None,
        }))
    }

    /// A leaf tensor that gradients can be taken with respect to.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Tensor {
        assert_eq!(data.len(), numel(shape));
        Tensor(Arc::new(Node {
            data,
            shape: shape.to_vec(),
            requires_grad: true,
            grad_fn: None,
        }))
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::new(vec![v], &[])
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::new(vec![0.0; numel(shape)], shape)
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Tensor::new(vec![1.0; numel(shape)], shape)
    }

    pub fn full(shape: &[usize], v: f64) -> Tensor {
        Tensor::new(vec![v; numel(shape)], shape)
    }

    pub(crate) fn from_op<F>(data: Vec<f64>, shape: Vec<usize>, inputs: Vec<Tensor>, backward: F) -> Tensor
    where
        F: Fn(&Tensor, &[Tensor], &Tensor) -> Vec<Option<Tensor>> + Send + Sync + 'static,
    {
        debug_assert_eq!(data.len(), numel(&shape));
        let requires_grad = grad_enabled() && inputs.iter().any(Tensor::requires_grad);
        let grad_fn = requires_grad.then(|| GradFn {
            inputs,
            backward: Box::new(backward),
        });
        Tensor(Arc::new(Node {
            data,
            shape,
            requires_grad,
            grad_fn,
        }))
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.0.shape[axis]
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    /// A constant copy cut off from the graph.
    pub fn detach(&self) -> Tensor {
        if !self.requires_grad() {
            return self.clone();
        }
        Tensor::new(self.0.data.clone(), &self.0.shape)
    }

    pub fn all_finite(&self) -> bool {
        self.0.data.iter().all(|v| v.is_finite())
    }

    fn key(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.0.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("data", &preview)
            .finish()
    }
}

/// Gradients of the scalar `output` with respect to each of `inputs`.
///
/// Inputs that `output` does not depend on yield `None`. With
/// `create_graph` the returned gradients are themselves differentiable.
pub fn grad(output: &Tensor, inputs: &[&Tensor], create_graph: bool) -> Vec<Option<Tensor>> {
    assert_eq!(output.numel(), 1, "grad() needs a scalar output");
    let seed = Tensor::ones(output.shape());
    grad_with(output, seed, inputs, create_graph)
}

/// Vector-Jacobian product: like [`grad`] but seeded with `grad_output`.
pub fn grad_with(
    output: &Tensor,
    grad_output: Tensor,
    inputs: &[&Tensor],
    create_graph: bool,
) -> Vec<Option<Tensor>> {
    assert_eq!(grad_output.shape(), output.shape());
    if !output.requires_grad() {
        return vec![None; inputs.len()];
    }
    let targets: HashSet<usize> = inputs.iter().map(|t| t.key()).collect();
    let order = topo_order(output, &targets);

    with_grad_mode(create_graph, || {
        let mut grads: HashMap<usize, Tensor> = HashMap::new();
        grads.insert(output.key(), grad_output);
        let mut results: HashMap<usize, Tensor> = HashMap::new();

        for node in order.iter().rev() {
            let key = node.key();
            let Some(g) = grads.remove(&key) else { continue };
            if targets.contains(&key) {
                results.insert(key, g.clone());
            }
            let Some(gf) = &node.0.grad_fn else { continue };
            let input_grads = (gf.backward)(&g, &gf.inputs, node);
            debug_assert_eq!(input_grads.len(), gf.inputs.len());
            for (inp, ig) in gf.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !inp.requires_grad() {
                    continue;
                }
                debug_assert_eq!(ig.shape(), inp.shape());
                let k = inp.key();
                let acc = match grads.remove(&k) {
                    Some(prev) => prev.add(&ig),
                    None => ig,
                };
                grads.insert(k, acc);
            }
        }
        inputs.iter().map(|t| results.get(&t.key()).cloned()).collect()
    })
}

/// Nodes on some path from `output` to a target, in topological order
/// (inputs before the ops that consume them).
fn topo_order(output: &Tensor, targets: &HashSet<usize>) -> Vec<Tensor> {
    // Iterative post-order DFS. `needed` marks nodes that reach a target.
    let mut needed: HashMap<usize, bool> = HashMap::new();
    let mut order = Vec::new();
    let mut stack: Vec<(Tensor, usize)> = vec![(output.clone(), 0)];
    let mut visiting: HashSet<usize> = HashSet::new();
    visiting.insert(output.key());

    while let Some((node, child_idx)) = stack.pop() {
        let inputs: &[Tensor] = match &node.0.grad_fn {
            Some(gf) => &gf.inputs,
            None => &[],
        };
        if child_idx < inputs.len() {
            let child = inputs[child_idx].clone();
            stack.push((node, child_idx + 1));
            let ck = child.key();
            if child.requires_grad() && !needed.contains_key(&ck) && !visiting.contains(&ck) {
                visiting.insert(ck);
                stack.push((child, 0));
            }
            continue;
        }
        let key = node.key();
        let reaches = targets.contains(&key)
            || inputs
                .iter()
                .any(|c| needed.get(&c.key()).copied().unwrap_or(false));
        needed.insert(key, reaches);
        if reaches {
            order.push(node);
        }
    }
    order
}
