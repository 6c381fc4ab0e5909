//! Fan-out of stream messages through per-client bounded queues.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use tokio::sync::Notify;

use crate::messages::StreamMessage;

#[derive(Debug, Default)]
struct QueueState {
    items: VecDeque<(Arc<str>, bool)>,
    droppable: usize,
    dropped: u64,
}

/// Outgoing queue of one client. Droppable entries beyond the capacity are
/// discarded oldest first; reliable entries are always kept.
#[derive(Debug)]
pub struct ClientQueue {
    state: Mutex<QueueState>,
    notify: Notify,
    capacity: usize,
}

impl ClientQueue {
    pub fn new(capacity: usize) -> Self {
        Self { state: Mutex::default(), notify: Notify::new(), capacity: capacity.max(1) }
    }

    pub fn push(&self, json: Arc<str>, reliable: bool) {
        {
            let mut s = self.state.lock().expect("queue lock");
            if !reliable {
                if s.droppable >= self.capacity {
                    if let Some(i) = s.items.iter().position(|(_, r)| !r) {
                        s.items.remove(i);
                        s.droppable -= 1;
                        s.dropped += 1;
                    }
                }
                s.droppable += 1;
            }
            s.items.push_back((json, reliable));
        }
        self.notify.notify_one();
    }

    pub fn drain(&self) -> Vec<Arc<str>> {
        let mut s = self.state.lock().expect("queue lock");
        s.droppable = 0;
        s.items.drain(..).map(|(j, _)| j).collect()
    }

    pub fn len(&self) -> usize {
        self.state.lock().expect("queue lock").items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Droppable messages discarded so far.
    pub fn dropped(&self) -> u64 {
        self.state.lock().expect("queue lock").dropped
    }

    /// Resolves once something has been pushed since the last wake-up.
    pub async fn ready(&self) {
        self.notify.notified().await
    }
}

#[derive(Debug)]
pub struct Hub {
    clients: Mutex<Vec<Arc<ClientQueue>>>,
    capacity: usize,
}

impl Hub {
    pub fn new(capacity: usize) -> Self {
        Self { clients: Mutex::new(Vec::new()), capacity }
    }

    pub fn subscribe(&self) -> Arc<ClientQueue> {
        let q = Arc::new(ClientQueue::new(self.capacity));
        self.clients.lock().expect("hub lock").push(q.clone());
        q
    }

    pub fn unsubscribe(&self, queue: &Arc<ClientQueue>) {
        self.clients.lock().expect("hub lock").retain(|q| !Arc::ptr_eq(q, queue));
    }

    pub fn subscribers(&self) -> usize {
        self.clients.lock().expect("hub lock").len()
    }

    pub fn publish(&self, message: &StreamMessage) {
        let json: Arc<str> = match serde_json::to_string(message) {
            Ok(s) => s.into(),
            Err(e) => {
                tracing::error!("unserializable stream message: {e}");
                return;
            }
        };
        let reliable = message.is_reliable();
        for q in self.clients.lock().expect("hub lock").iter() {
            q.push(json.clone(), reliable);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reliable_entries_survive_overflow() {
        let q = ClientQueue::new(4);
        for i in 0..100 {
            q.push(format!("c{i}").into(), false);
            if i % 10 == 0 {
                q.push(format!("r{i}").into(), true);
            }
        }
        let items: Vec<String> = q.drain().iter().map(|s| s.to_string()).collect();
        let reliable: Vec<&String> = items.iter().filter(|s| s.starts_with('r')).collect();
        assert_eq!(reliable.len(), 10);
        let cursors: Vec<&String> = items.iter().filter(|s| s.starts_with('c')).collect();
        assert_eq!(cursors, ["c96", "c97", "c98", "c99"]);
        assert_eq!(q.dropped(), 96);
        assert!(q.is_empty());
    }

    #[test]
    fn order_is_preserved() {
        let q = ClientQueue::new(100);
        for i in 0..50 {
            q.push(i.to_string().into(), i % 3 == 0);
        }
        let got: Vec<usize> = q.drain().iter().map(|s| s.parse().unwrap()).collect();
        assert_eq!(got, (0..50).collect::<Vec<_>>());
    }
}
