//! An application that sends a fixed list of frames at fixed times and
//! records what happens. Used by the contention demo and by tests.

use crate::error::SimError;
use crate::frame::Frame;
use crate::time::SimTime;
use crate::world::{Application, Core};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptedSend {
    pub at: SimTime,
    pub node: usize,
    pub frame: Frame,
    pub broadcast_reply: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observed {
    pub at: SimTime,
    pub node: usize,
    pub frame: Frame,
}

#[derive(Debug, Clone, Default)]
pub struct ScriptApp {
    sends: Vec<ScriptedSend>,
    pub received: Vec<Observed>,
    pub tx_started: Vec<Observed>,
    pub tx_ended: Vec<(Observed, bool)>,
}

impl ScriptApp {
    pub fn new(sends: Vec<ScriptedSend>) -> Self {
        ScriptApp {
            sends,
            ..ScriptApp::default()
        }
    }
}

impl Application for ScriptApp {
    fn init(&mut self, core: &mut Core) -> Result<(), SimError> {
        for (k, s) in self.sends.iter().enumerate() {
            core.set_timer(s.node, s.at, k as u64)?;
        }
        Ok(())
    }

    fn on_timer(&mut self, core: &mut Core, _node: usize, token: u64) -> Result<(), SimError> {
        let s = self.sends[token as usize].clone();
        core.send(s.node, s.frame, s.broadcast_reply)
    }

    fn on_receive(&mut self, core: &mut Core, node: usize, frame: &Frame) -> Result<(), SimError> {
        self.received.push(Observed {
            at: core.now(),
            node,
            frame: frame.clone(),
        });
        Ok(())
    }

    fn on_tx_start(&mut self, core: &mut Core, node: usize, frame: &Frame) -> Result<(), SimError> {
        self.tx_started.push(Observed {
            at: core.now(),
            node,
            frame: frame.clone(),
        });
        Ok(())
    }

    fn on_tx_end(&mut self, core: &mut Core, node: usize, frame: &Frame, collided: bool) -> Result<(), SimError> {
        self.tx_ended.push((
            Observed {
                at: core.now(),
                node,
                frame: frame.clone(),
            },
            collided,
        ));
        Ok(())
    }
}
