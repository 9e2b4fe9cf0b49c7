#include <linux/atomic.h>

void throttle(struct limiter *lim)
{
	atomic_add_unless(&lim->budget, -1, 0);
	atomic_add_unless(&lim->budget, 1, 100);
}
