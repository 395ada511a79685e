//! Radio channel between a gateway and one node.

use rand::Rng;

use crate::node::{NodeState, RpcCommand, RpcError, RpcResponse};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkFailure {
    /// The exchange was lost; retrying may succeed.
    Lost,
    /// The contact is over.
    Closed,
}

/// Carries one request to the node and its response back.
pub trait Channel {
    fn exchange(&mut self, node: &mut NodeState, cmd: &RpcCommand) -> Result<RpcResponse, LinkFailure>;

    /// Contact time used so far, in seconds.
    fn elapsed_s(&self) -> f64;
}

fn over_the_air(node: &mut NodeState, cmd: &RpcCommand) -> RpcResponse {
    let resp = node.handle_packet(&cmd.encode());
    RpcResponse::decode(&resp).unwrap_or(RpcResponse::Error(RpcError::Malformed))
}

/// Bulk transfers (page chunks and firmware chunks) occupy airtime; short
/// control exchanges are treated as free.
fn is_bulk(cmd: &RpcCommand) -> bool {
    matches!(cmd, RpcCommand::ReadPageChunk { .. } | RpcCommand::PutFwChunk { .. })
}

/// Loss-free channel with a fixed airtime per bulk packet and an optional
/// contact window.
#[derive(Debug, Clone)]
pub struct PerfectChannel {
    pub packet_airtime_s: f64,
    pub window_s: Option<f64>,
    elapsed: f64,
}

impl PerfectChannel {
    pub fn new(packet_airtime_s: f64, window_s: Option<f64>) -> Self {
        Self {
            packet_airtime_s,
            window_s,
            elapsed: 0.0,
        }
    }
}

impl Channel for PerfectChannel {
    fn exchange(&mut self, node: &mut NodeState, cmd: &RpcCommand) -> Result<RpcResponse, LinkFailure> {
        if is_bulk(cmd) {
            let next = self.elapsed + self.packet_airtime_s;
            if self.window_s.is_some_and(|w| next > w + 1e-9) {
                return Err(LinkFailure::Closed);
            }
            self.elapsed = next;
        }
        Ok(over_the_air(node, cmd))
    }

    fn elapsed_s(&self) -> f64 {
        self.elapsed
    }
}

/// Channel that loses each exchange with probability `loss_prob`. A lost
/// exchange still costs airtime; the node may have acted on the request.
pub struct LossyChannel<'r, R: Rng> {
    rng: &'r mut R,
    pub loss_prob: f64,
    pub packet_airtime_s: f64,
    pub window_s: Option<f64>,
    elapsed: f64,
}

impl<'r, R: Rng> LossyChannel<'r, R> {
    pub fn new(rng: &'r mut R, loss_prob: f64, packet_airtime_s: f64, window_s: Option<f64>) -> Self {
        Self {
            rng,
            loss_prob,
            packet_airtime_s,
            window_s,
            elapsed: 0.0,
        }
    }
}

impl<R: Rng> Channel for LossyChannel<'_, R> {
    fn exchange(&mut self, node: &mut NodeState, cmd: &RpcCommand) -> Result<RpcResponse, LinkFailure> {
        if is_bulk(cmd) {
            let next = self.elapsed + self.packet_airtime_s;
            if self.window_s.is_some_and(|w| next > w + 1e-9) {
                return Err(LinkFailure::Closed);
            }
            self.elapsed = next;
        }
        let resp = over_the_air(node, cmd);
        if self.loss_prob > 0.0 && self.rng.random::<f64>() < self.loss_prob {
            return Err(LinkFailure::Lost);
        }
        Ok(resp)
    }

    fn elapsed_s(&self) -> f64 {
        self.elapsed
    }
}
