use std::cell::{Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::rc::Rc;

/// Inputs handed to a node's backward function.
pub(crate) struct BackwardArgs<'a> {
    /// Gradient of the loss w.r.t. this node's output.
    pub grad_out: &'a [f64],
    /// This node's forward output.
    pub output: &'a [f64],
    /// Forward values of each parent, in recording order.
    pub parents: &'a [Vec<f64>],
}

/// Returns one gradient buffer per parent (`None` to skip a parent).
pub(crate) type BackwardFn = Box<dyn Fn(&BackwardArgs) -> Vec<Option<Vec<f64>>>>;

pub(crate) struct Node {
    pub parents: Vec<Tensor>,
    pub backward: BackwardFn,
}

pub(crate) struct Inner {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    node: Option<Node>,
}

/// A dense row-major f64 tensor, optionally tracked on the autodiff graph.
///
/// Cloning is cheap (reference counted). Values are immutable once created,
/// except for leaf tensors which can be nudged by optimizers and the
/// finite-difference checker.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Tensor {
        assert!(
            shape.iter().all(|&d| d > 0),
            "tensor extents must be positive, got {shape:?}"
        );
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "product(shape) must equal len(data): {shape:?} vs {}",
            data.len()
        );
        Tensor {
            inner: Rc::new(Inner {
                shape: shape.to_vec(),
                data: RefCell::new(data),
                requires_grad: false,
                grad: RefCell::new(None),
                node: None,
            }),
        }
    }

    /// A trainable leaf: tracked on the graph, gradient accumulated on backward.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Tensor {
        assert!(shape.iter().all(|&d| d > 0), "tensor extents must be positive");
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Rc::new(Inner {
                shape: shape.to_vec(),
                data: RefCell::new(data),
                requires_grad: true,
                grad: RefCell::new(None),
                node: None,
            }),
        }
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, vec![1.0; n])
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::new(&[1], vec![v])
    }

    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        let tracked = parents.iter().any(|p| p.inner.requires_grad);
        let node = if tracked {
            Some(Node { parents, backward })
        } else {
            None
        };
        Tensor {
            inner: Rc::new(Inner {
                shape,
                data: RefCell::new(data),
                requires_grad: tracked,
                grad: RefCell::new(None),
                node,
            }),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.data.borrow().clone()
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() requires a scalar tensor");
        self.inner.data.borrow()[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.node.is_none()
    }

    /// Overwrite a leaf's values in place (optimizer steps, finite differences).
    pub fn set_data(&self, data: &[f64]) {
        assert!(self.is_leaf(), "only leaf tensors may be mutated");
        assert_eq!(data.len(), self.numel());
        self.inner.data.borrow_mut().copy_from_slice(data);
    }

    /// Add `delta` to a single coordinate of a leaf.
    pub fn nudge(&self, index: usize, delta: f64) {
        assert!(self.is_leaf(), "only leaf tensors may be mutated");
        self.inner.data.borrow_mut()[index] += delta;
    }

    fn ptr(&self) -> *const Inner {
        Rc::as_ptr(&self.inner)
    }

    /// Reverse-mode sweep from a scalar output. Gradients accumulate into the
    /// `grad` buffer of every leaf that requires grad; call [`zero_grad`] on
    /// parameters between steps.
    ///
    /// [`zero_grad`]: Tensor::zero_grad
    pub fn backward(&self) {
        assert_eq!(self.numel(), 1, "backward() requires a scalar output");
        // Iterative post-order over the graph.
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<*const Inner> = HashSet::new();
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.ptr());
        while let Some((t, child)) = stack.pop() {
            let nparents = t.inner.node.as_ref().map_or(0, |n| n.parents.len());
            if child < nparents {
                stack.push((t.clone(), child + 1));
                let p = t.inner.node.as_ref().unwrap().parents[child].clone();
                if p.inner.requires_grad && visited.insert(p.ptr()) {
                    stack.push((p, 0));
                }
            } else {
                order.push(t);
            }
        }

        let mut grads: HashMap<*const Inner, Vec<f64>> = HashMap::new();
        grads.insert(self.ptr(), vec![1.0]);

        for t in order.iter().rev() {
            let Some(node) = t.inner.node.as_ref() else {
                continue;
            };
            let Some(grad_out) = grads.get(&t.ptr()).cloned() else {
                continue;
            };
            let parent_values: Vec<Vec<f64>> =
                node.parents.iter().map(|p| p.to_vec()).collect();
            let output = t.to_vec();
            let args = BackwardArgs {
                grad_out: &grad_out,
                output: &output,
                parents: &parent_values,
            };
            let parent_grads = (node.backward)(&args);
            assert_eq!(parent_grads.len(), node.parents.len());
            for (p, g) in node.parents.iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                if !p.inner.requires_grad {
                    continue;
                }
                assert_eq!(g.len(), p.numel());
                let entry = grads
                    .entry(p.ptr())
                    .or_insert_with(|| vec![0.0; p.numel()]);
                for (e, v) in entry.iter_mut().zip(&g) {
                    *e += v;
                }
            }
        }

        // Accumulate into leaves.
        for t in &order {
            if t.inner.node.is_none() && t.inner.requires_grad {
                if let Some(g) = grads.get(&t.ptr()) {
                    let mut slot = t.inner.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(existing) => {
                            for (e, v) in existing.iter_mut().zip(g) {
                                *e += v;
                            }
                        }
                        None => *slot = Some(g.clone()),
                    }
                }
            }
        }
    }
}
