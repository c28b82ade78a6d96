// Minimal fork-join helper. Work is split by index, so any reduction the
// caller performs in index order is independent of the thread count.
// ICL_LAB_THREADS bounds the worker count.
#pragma once

#include <functional>

namespace icl {

int worker_count();

// Runs fn(i) for i in [0, count). Blocks until done. Exceptions from tasks
// are rethrown on the calling thread.
void parallel_for(int count, const std::function<void(int)>& fn);

}  // namespace icl
