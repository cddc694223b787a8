//! Shared inference for many concurrent searches.
//!
//! Searches on several threads send single positions to one server thread,
//! which evaluates whatever has queued up as one batch. A position's result
//! never depends on what it was batched with.

use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;

use super::model::{Evaluation, Input, Model};
use super::NnError;
use crate::encode::TokenSequence;

struct Request {
    seq: TokenSequence,
    legal: Vec<usize>,
    reply: Sender<Result<Evaluation, NnError>>,
}

/// Handle used by a search thread.
#[derive(Clone)]
pub struct BatchClient {
    tx: Sender<Request>,
}

impl BatchClient {
    pub fn evaluate(&self, seq: TokenSequence, legal: Vec<usize>) -> Result<Evaluation, NnError> {
        let (reply, rx) = mpsc::channel();
        self.tx
            .send(Request { seq, legal, reply })
            .map_err(|_| NnError::ServiceStopped)?;
        rx.recv().map_err(|_| NnError::ServiceStopped)?
    }
}

pub struct BatchServer {
    client: Option<BatchClient>,
    handle: Option<JoinHandle<usize>>,
}

impl BatchServer {
    pub fn start(model: Arc<Model<f32>>, max_batch: usize) -> BatchServer {
        let (tx, rx) = mpsc::channel::<Request>();
        let handle = std::thread::spawn(move || serve(&model, rx, max_batch.max(1)));
        BatchServer {
            client: Some(BatchClient { tx }),
            handle: Some(handle),
        }
    }

    pub fn client(&self) -> BatchClient {
        self.client.clone().expect("server running")
    }

    /// Stop once every client is dropped; returns the number of batches run.
    pub fn shutdown(mut self) -> usize {
        self.client.take();
        self.handle.take().map_or(0, |h| h.join().unwrap_or(0))
    }
}

impl Drop for BatchServer {
    fn drop(&mut self) {
        self.client.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(model: &Model<f32>, rx: Receiver<Request>, max_batch: usize) -> usize {
    let mut batches = 0;
    while let Ok(first) = rx.recv() {
        let mut pending = vec![first];
        while pending.len() < max_batch {
            match rx.try_recv() {
                Ok(r) => pending.push(r),
                Err(_) => break,
            }
        }
        batches += 1;
        let inputs: Vec<Input<'_>> = pending
            .iter()
            .map(|r| Input { seq: &r.seq, legal: &r.legal })
            .collect();
        match model.evaluate_batch(&inputs) {
            Ok(results) => {
                for (r, e) in pending.iter().zip(results) {
                    let _ = r.reply.send(Ok(e));
                }
            }
            Err(_) => {
                // Retry one by one so a bad request only fails itself.
                for r in &pending {
                    let res = model
                        .evaluate_batch(&[Input { seq: &r.seq, legal: &r.legal }])
                        .map(|mut v| v.pop().expect("one result"));
                    let _ = r.reply.send(res);
                }
            }
        }
    }
    batches
}
